"""Central finite-difference gradient checks.

The relative error of one coordinate is ``|a - n| / max(|a|, |n|, atol)``.
Coordinates where the one-sided differences disagree by more than the
tolerance straddle a ReLU / max-pool kink; they are counted as skipped and
not scored, since no finite step is valid there.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import functional as F
from .tensor import Tensor


@dataclass
class GradCheckEntry:
    name: str
    max_rel_error: float = 0.0
    checked: int = 0
    skipped: int = 0


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry] = field(default_factory=list)
    tolerance: float = 1e-4

    @property
    def max_rel_error(self) -> float:
        return max((e.max_rel_error for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return all(e.max_rel_error <= self.tolerance and e.checked > 0 for e in self.entries)

    def failures(self) -> list[GradCheckEntry]:
        return [e for e in self.entries if e.max_rel_error > self.tolerance or e.checked == 0]

    def merge(self, other: GradCheckReport) -> GradCheckReport:
        by_name = {e.name: e for e in self.entries}
        for e in other.entries:
            mine = by_name.get(e.name)
            if mine is None:
                mine = GradCheckEntry(e.name)
                self.entries.append(mine)
                by_name[e.name] = mine
            mine.max_rel_error = max(mine.max_rel_error, e.max_rel_error)
            mine.checked += e.checked
            mine.skipped += e.skipped
        return self

    def format(self) -> str:
        lines = [f"{'name':<28}{'max rel err':>13}{'checked':>9}{'kinks':>7}  status"]
        for e in self.entries:
            ok = e.max_rel_error <= self.tolerance and e.checked > 0
            lines.append(f"{e.name:<28}{e.max_rel_error:>13.3e}{e.checked:>9}{e.skipped:>7}  "
                         f"{'ok' if ok else 'FAIL'}")
        return "\n".join(lines)


def grad_check(fn: Callable[[], Tensor], inputs: dict[str, Tensor], tolerance: float = 1e-4,
               h: float = 1e-6, atol: float = 1e-6, max_coords: int | None = None,
               rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare analytic gradients of scalar ``fn()`` w.r.t. ``inputs`` to central differences.

    ``fn`` must rebuild its graph from the current ``.data`` of the inputs on
    every call.  With ``max_coords`` only a random subset of coordinates per
    input is perturbed.
    """
    rng = rng or np.random.default_rng(0)
    for t in inputs.values():
        t.grad = None
    out = fn()
    out.backward()
    analytic = {k: (np.zeros_like(t.data) if t.grad is None else t.grad.copy()) for k, t in inputs.items()}
    f0 = out.item()
    report = GradCheckReport(tolerance=tolerance)
    for name, t in inputs.items():
        entry = GradCheckEntry(name)
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        a_flat = analytic[name].reshape(-1)
        for i in coords:
            orig = flat[i]
            step = h * max(1.0, abs(float(orig)))
            flat[i] = orig + step
            fp = fn().item()
            flat[i] = orig - step
            fm = fn().item()
            flat[i] = orig
            fwd, bwd = (fp - f0) / step, (f0 - fm) / step
            if abs(fwd - bwd) > tolerance * max(abs(fwd), abs(bwd), atol):
                entry.skipped += 1
                continue
            num = (fp - fm) / (2 * step)
            a = float(a_flat[i])
            err = abs(a - num) / max(abs(a), abs(num), atol)
            entry.max_rel_error = max(entry.max_rel_error, err)
            entry.checked += 1
        report.entries.append(entry)
    return report


def _weighted_sum(y: Tensor, weights: np.ndarray) -> Tensor:
    return (y * Tensor(weights)).sum()


def op_cases(rng: np.random.Generator, dtype=np.float64) -> dict:
    """Small randomized graphs, one per differentiable op: name -> (fn, inputs)."""
    def t(*shape, scale=1.0):
        return Tensor((rng.standard_normal(shape) * scale).astype(dtype), requires_grad=True)

    cases = {}
    x, w, b = t(2, 3, 6, 6), t(4, 3, 3, 3), t(4)
    r1 = rng.standard_normal((2, 4, 6, 6))
    cases["conv2d"] = (lambda x=x, w=w, b=b: _weighted_sum(F.conv2d(x, w, b, 1, 1), r1),
                       {"input": x, "weight": w, "bias": b})
    x2, w2 = t(1, 2, 7, 7), t(3, 2, 3, 3)
    r2 = rng.standard_normal((1, 3, 3, 3))
    cases["conv2d_stride2"] = (lambda: _weighted_sum(F.conv2d(x2, w2, None, 2, 0), r2),
                               {"input": x2, "weight": w2})
    x3, w3, b3 = t(1, 2, 4, 4), t(2, 3, 2, 2), t(3)
    r3 = rng.standard_normal((1, 3, 8, 8))
    cases["transposed_conv2d"] = (lambda: _weighted_sum(F.transposed_conv2d(x3, w3, b3, 2), r3),
                                  {"input": x3, "weight": w3, "bias": b3})
    x4 = t(2, 2, 4, 4)
    r4 = rng.standard_normal((2, 2, 2, 2))
    cases["maxpool2d"] = (lambda: _weighted_sum(F.maxpool2d(x4), r4), {"input": x4})
    x5 = t(3, 5)
    r5 = rng.standard_normal((3, 5))
    cases["relu"] = (lambda: _weighted_sum(F.relu(x5), r5), {"input": x5})
    a6, b6 = t(1, 2, 3, 3), t(1, 3, 3, 3)
    r6 = rng.standard_normal((1, 5, 3, 3))
    cases["concat_channels"] = (lambda: _weighted_sum(F.concat_channels(a6, b6), r6),
                                {"a": a6, "b": b6})
    x7 = t(2, 4, 3, 3)
    tgt = rng.integers(0, 4, size=(2, 3, 3))
    cases["softmax_cross_entropy"] = (lambda: F.softmax_cross_entropy(x7, tgt), {"logits": x7})
    return cases


def check_ops(seed: int = 0, tolerance: float = 1e-4, dtype=np.float64) -> GradCheckReport:
    """Per-op report: the max relative error over all inputs of each op."""
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=tolerance)
    for name, (fn, inputs) in op_cases(rng, dtype).items():
        sub = grad_check(fn, inputs, tolerance=tolerance)
        entry = GradCheckEntry(name)
        for e in sub.entries:
            entry.max_rel_error = max(entry.max_rel_error, e.max_rel_error)
            entry.checked += e.checked
            entry.skipped += e.skipped
        report.entries.append(entry)
    return report
