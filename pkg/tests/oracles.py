"""Independent reference implementations used only by the tests.

Nothing here imports the package's kernels: each oracle is written from the
defining formula with plain loops so that a shared bug cannot hide.
"""
from __future__ import annotations

import itertools
import math

import numpy as np


def conv2d_loops(x, w, b=None, stride=1, padding=0):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding), dtype=np.float64)
    xp[:, :, padding:padding + h, padding:padding + wd] = x
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    y = np.zeros((n, o, ho, wo))
    for ni, oi, i, j in itertools.product(range(n), range(o), range(ho), range(wo)):
        patch = xp[ni, :, i * stride:i * stride + k, j * stride:j * stride + k]
        y[ni, oi, i, j] = np.sum(patch * w[oi]) + (0.0 if b is None else b[oi])
    return y


def transposed_conv2d_loops(x, w, b=None, stride=2):
    """Scatter form: every input pixel stamps ``x * w[ci, :]`` at ``stride * (i, j)``."""
    n, ci, h, wd = x.shape
    _, co, k, _ = w.shape
    y = np.zeros((n, co, stride * (h - 1) + k, stride * (wd - 1) + k))
    for ni, c, i, j in itertools.product(range(n), range(ci), range(h), range(wd)):
        y[ni, :, i * stride:i * stride + k, j * stride:j * stride + k] += x[ni, c, i, j] * w[c]
    if b is not None:
        y += np.asarray(b)[None, :, None, None]
    return y


def receptive_field_hand(layers):
    """``layers``: (kind, k, s).  Returns the rf after each layer."""
    rf, jump, out = 1.0, 1.0, []
    for kind, k, s in layers:
        if kind == "transposed-conv":
            rf += (math.ceil(k / s) - 1) * jump
            jump /= s
        else:
            rf += (k - 1) * jump
            jump *= s
        out.append(rf)
    return out


def adam_reference(grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8, p0=0.0):
    """Scalar ADAM recurrence; returns parameter after each step."""
    p, m, v, out = p0, 0.0, 0.0, []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        out.append(p)
    return out


def unet_parameter_count(width, n_classes, in_channels=1, levels=4, k=3):
    """Closed-form parameter count of the two-convs-per-level U-Net."""
    def conv(ci, co, kk=k):
        return ci * co * kk * kk + co
    widths = [width * 2 ** i for i in range(levels)]
    total, ci = 0, in_channels
    for wl in widths:
        total += conv(ci, wl) + conv(wl, wl)
        ci = wl
    for lvl in range(levels - 2, -1, -1):
        wl = widths[lvl]
        total += conv(widths[lvl + 1], wl, 2)             # transposed conv, k=2
        total += conv(2 * wl, wl) + conv(wl, wl)
    return total + conv(width, n_classes, 1)


def pairwise_distances(points):
    pts = list(points)
    return sorted(math.dist(a, b) for a, b in itertools.combinations(pts, 2))


def sprite_support(pixels, center, size):
    """Boolean ``size x size`` map of pixels a sprite covers when centred at ``center``."""
    out = np.zeros((size, size), dtype=bool)
    cx, cy = int(round(center[0])), int(round(center[1]))
    for r in range(pixels.shape[0]):
        for c in range(pixels.shape[1]):
            y, x = cy - 14 + r, cx - 14 + c
            if 0 <= y < size and 0 <= x < size and pixels[r, c] > 0:
                out[y, x] = True
    return out


def occlusion_recall(scene_inst, sprites, reference, size):
    """Shirt recall of a perfect 'what is visible' predictor, from sprite supports alone."""
    keys = dict(zip(("shirt", "pants", "bag"), scene_inst.sprite_keys["oi"]))
    shirt = sprite_support(sprites.resolve("shirt", keys["shirt"]).pixels, scene_inst.oi_centers["shirt"], size)
    if reference == "shirt":
        return 1.0
    # whatever the order of the others, both are drawn after a non-reference shirt
    covered = np.zeros_like(shirt)
    for c in ("pants", "bag"):
        covered |= sprite_support(sprites.resolve(c, keys[c]).pixels, scene_inst.oi_centers[c], size)
    total = shirt.sum()
    return 1.0 if total == 0 else float((shirt & ~covered).sum() / total)
