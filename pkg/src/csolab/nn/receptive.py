"""Receptive-field calculator for layer stacks.

Per layer: ``rf += (k - 1) * jump`` and ``jump *= stride``.  A transposed
convolution divides the jump by its stride; an output unit of it sees
``ceil(k / s)`` input units, so it adds ``(ceil(k / s) - 1) * jump_in``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction


@dataclass(frozen=True)
class LayerSpec:
    kind: str           # "conv" | "pool" | "transposed-conv"
    kernel: int
    stride: int = 1
    padding: int = 0
    name: str = ""

    def __post_init__(self):
        if self.kernel < 1 or self.stride < 1 or self.padding < 0:
            raise ValueError(f"invalid layer geometry {self}")
        if self.kind not in ("conv", "pool", "transposed-conv"):
            raise ValueError(f"unknown layer kind {self.kind!r}")


def receptive_field(layers) -> list[tuple[int, Fraction]]:
    rf, jump = 1, Fraction(1)
    out = []
    for layer in layers:
        if layer.kind == "transposed-conv":
            rf += (math.ceil(layer.kernel / layer.stride) - 1) * jump
            jump /= layer.stride
        else:
            rf += (layer.kernel - 1) * jump
            jump *= layer.stride
        out.append((int(rf), jump))
    return out


def format_table(layers, results) -> str:
    lines = [f"{'layer':<14}{'kind':<17}{'k':>3}{'s':>3}{'rf':>6}{'jump':>7}"]
    for layer, (rf, jump) in zip(layers, results):
        lines.append(f"{layer.name:<14}{layer.kind:<17}{layer.kernel:>3}{layer.stride:>3}{rf:>6}{str(jump):>7}")
    return "\n".join(lines)
