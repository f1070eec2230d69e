"""Differentiable U-Net primitives on :class:`~csolab.nn.tensor.Tensor`."""
from __future__ import annotations

import numpy as np

from ..errors import IndexOutOfRange, ShapeMismatch
from . import kernels
from .tensor import Tensor


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    y, cache = kernels.conv2d_forward(x.data, w.data, None if b is None else b.data, stride, padding)

    def backward(g):
        dx, dw, db = kernels.conv2d_backward(x.data, w.data, g, stride, padding, cache,
                                             need_dx=x.requires_grad)
        return (dx, dw) if b is None else (dx, dw, db)

    parents = (x, w) if b is None else (x, w, b)
    return Tensor.from_op(y, parents, backward, "conv2d")


def transposed_conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 2) -> Tensor:
    y = kernels.transposed_conv2d_forward(x.data, w.data, None if b is None else b.data, stride)

    def backward(g):
        dx, dw, db = kernels.transposed_conv2d_backward(x.data, w.data, g, stride,
                                                        need_dx=x.requires_grad)
        return (dx, dw) if b is None else (dx, dw, db)

    parents = (x, w) if b is None else (x, w, b)
    return Tensor.from_op(y, parents, backward, "transposed_conv2d")


def maxpool2d(x: Tensor, k: int = 2, s: int = 2) -> Tensor:
    if s != k:
        raise ShapeMismatch("only non-overlapping pooling (stride == kernel) is supported")
    y, arg = kernels.maxpool2d_forward(x.data, k)
    shape = x.shape
    return Tensor.from_op(y, (x,), lambda g: (kernels.maxpool2d_backward(g, arg, shape, k),), "maxpool2d")


def relu(x: Tensor) -> Tensor:
    on = x.data > 0
    return Tensor.from_op(np.maximum(x.data, 0), (x,), lambda g: (g * on,), "relu")


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 4 or b.data.ndim != 4 or a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeMismatch(f"cannot concatenate {a.shape} and {b.shape} along channels")
    ca = a.shape[1]
    y = np.concatenate([a.data, b.data], axis=1)
    return Tensor.from_op(y, (a, b), lambda g: (g[:, :ca], g[:, ca:]), "concat_channels")


_FLUSH_BELOW = 1e-30


def log_softmax(logits: np.ndarray, axis: int = 1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def softmax_cross_entropy(logits: Tensor, target) -> Tensor:
    """Pixelwise softmax + NLL averaged over all N*H*W pixels."""
    target = np.asarray(target)
    n, c = logits.shape[:2]
    if target.shape != (n,) + logits.shape[2:]:
        raise ShapeMismatch(f"target shape {target.shape} does not match logits {logits.shape}")
    if target.size and (target.min() < 0 or target.max() >= c):
        raise IndexOutOfRange(f"target indices must lie in [0, {c})")
    t = target.astype(np.int64)[:, None]
    logp = log_softmax(logits.data)
    count = target.size
    loss = -np.take_along_axis(logp, t, axis=1).sum(dtype=np.float64) / count

    def backward(g):
        grad = np.exp(logp)
        # saturated probabilities are float32 denormals, which stall every GEMM downstream
        grad[grad < _FLUSH_BELOW] = 0
        np.put_along_axis(grad, t, np.take_along_axis(grad, t, axis=1) - 1, axis=1)
        return (grad * (g / count),)

    return Tensor.from_op(np.asarray(loss, dtype=logits.dtype), (logits,), backward, "softmax_cross_entropy")
