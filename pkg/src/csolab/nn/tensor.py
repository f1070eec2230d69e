"""Eager reverse-mode autodiff over numpy arrays.

Every op that touches a tensor with ``requires_grad`` records a node holding
its parents and a backward closure.  :meth:`Tensor.backward` orders the
recorded nodes topologically and runs each closure exactly once.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import ShapeMismatch

_F32_TINY = np.finfo(np.float32).tiny


def flush_subnormal(a: np.ndarray) -> np.ndarray:
    """Zero float32 subnormals; they slow BLAS kernels by more than an order of magnitude."""
    if a.dtype != np.float32:
        return a
    return np.where(np.abs(a) < _F32_TINY, np.float32(0), a)


class Tensor:
    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self.op: str | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @classmethod
    def from_op(cls, data, parents, backward, op):
        out = cls(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
            out.op = op
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # small elementwise algebra; enough for losses and tests
    def __add__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(np.asarray(other, self.dtype))
        if other.shape not in ((), self.shape):
            raise ShapeMismatch(f"add: {self.shape} vs {other.shape}")
        return Tensor.from_op(self.data + other.data, (self, other),
                              lambda g: (g, g.sum() if other.shape == () else g), "add")

    def __mul__(self, other):
        if isinstance(other, Tensor):
            if other.shape != self.shape:
                raise ShapeMismatch(f"mul: {self.shape} vs {other.shape}")
            a, b = self.data, other.data
            return Tensor.from_op(a * b, (self, other), lambda g: (g * b, g * a), "mul")
        c = np.asarray(other, dtype=self.dtype)
        return Tensor.from_op(self.data * c, (self,), lambda g: (g * c,), "scale")

    __rmul__ = __mul__
    __radd__ = __add__

    def sum(self) -> Tensor:
        shape = self.shape
        return Tensor.from_op(self.data.sum(), (self,),
                              lambda g: (np.broadcast_to(g, shape).copy(),), "sum")

    def backward(self, grad=None) -> Graph:
        if grad is None:
            if self.data.size != 1:
                raise ShapeMismatch("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        graph = Graph.from_output(self)
        graph.backward(self, np.asarray(grad, dtype=self.dtype))
        return graph


class Graph:
    """Recorded nodes of one forward pass, in topological order."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes
        self.visits: list[Tensor] = []

    @classmethod
    def from_output(cls, out: Tensor) -> Graph:
        order, seen = [], set()
        stack = [(out, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def backward(self, out: Tensor, seed: np.ndarray) -> None:
        grads = {id(out): seed}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            self.visits.append(node)
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pg = flush_subnormal(pg)
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
