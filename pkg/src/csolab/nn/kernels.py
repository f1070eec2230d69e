"""Dense NCHW kernels (no autodiff).

Stride-1 convolutions use an implicit patch matrix: the zero-padded input is
flattened per sample to ``(C, Hp*Wp)`` and every kernel tap is a contiguous
column shift of that buffer.  One GEMM ``(k*k*O, C) @ (C, Hp*Wp)`` produces
all tap responses, which are then shift-added.  Outputs are computed on the
full padded width and the ``k-1`` wrap-around columns per row are dropped.
This avoids materialising the ``k*k``-times larger patch matrix, which on a
single core costs more than the GEMM itself.  Other strides use an explicit
strided-view patch matrix.  :func:`conv2d_direct` is the loop oracle.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from ..errors import OddSpatialDim, ShapeMismatch


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _check_conv(x, w, b):
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeMismatch(f"conv2d expects NCHW input and OIkk weight, got {x.shape}, {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"input has {x.shape[1]} channels, weight expects {w.shape[1]}")
    if w.shape[2] != w.shape[3]:
        raise ShapeMismatch("only square kernels are supported")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeMismatch(f"bias shape {b.shape} does not match {w.shape[0]} outputs")


# -- stride-1 implicit patch matrix ----------------------------------------

def _pad_flat(x, padding, k):
    """``(N, C, Hp*Wp + k - 1)`` zero-padded buffer; the tail keeps shifted reads in bounds."""
    n, c, h, w = x.shape
    hp, wp = h + 2 * padding, w + 2 * padding
    buf = np.zeros((n, c, hp * wp + k - 1), dtype=x.dtype)
    buf[:, :, :hp * wp].reshape(n, c, hp, wp)[:, :, padding:padding + h, padding:padding + w] = x
    return buf


def _conv_s1(x, w, padding, buf=None):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    hp, wp = h + 2 * padding, wd + 2 * padding
    ho, wo = hp - k + 1, wp - k + 1
    span = ho * wp
    if buf is None:
        buf = _pad_flat(x, padding, k)
    taps = np.ascontiguousarray(w.transpose(2, 3, 0, 1)).reshape(k * k * o, c)
    out = np.empty((n, o, ho, wo), dtype=x.dtype)
    for i in range(n):
        y = taps @ buf[i]
        acc = y[:o, :span].copy()
        for t in range(1, k * k):
            off = (t // k) * wp + (t % k)
            acc += y[t * o:(t + 1) * o, off:off + span]
        out[i] = acc.reshape(o, ho, wp)[:, :, :wo]
    return out, buf


def _conv_s1_weight_grad(buf, dy, k, wp):
    n, o, ho, wo = dy.shape
    c = buf.shape[1]
    span = ho * wp
    dw = np.zeros((k, k, o, c), dtype=dy.dtype)
    dyw = np.zeros((o, ho, wp), dtype=dy.dtype)
    for i in range(n):
        dyw[:, :, :wo] = dy[i]
        flat = dyw.reshape(o, span)
        for t in range(k * k):
            off = (t // k) * wp + (t % k)
            dw[t // k, t % k] += flat @ buf[i][:, off:off + span].T
    return dw.transpose(2, 3, 0, 1)


# -- explicit patch matrix (any stride) --------------------------------------

def im2col(x, k, stride, padding):
    """``(N, C*k*k, Ho*Wo)`` patch matrix built from a strided view."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(w, k, stride, padding)
    s0, s1, s2, s3 = xp.strides
    view = as_strided(xp, (n, c, k, k, ho, wo), (s0, s1, s2, s3, s2 * stride, s3 * stride))
    return view.reshape(n, c * k * k, ho * wo), (ho, wo)


def col2im(cols, x_shape, k, stride, padding):
    n, c, h, w = x_shape
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(w, k, stride, padding)
    cols = cols.reshape(n, c, k, k, ho, wo)
    xp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, :, i, j]
    return xp[:, :, padding:padding + h, padding:padding + w]


# -- public conv entry points ------------------------------------------------

def conv2d_forward(x, w, b=None, stride=1, padding=0):
    """Cross-correlation with zero padding.  Returns ``(y, cache)``."""
    _check_conv(x, w, b)
    o, c, k, _ = w.shape
    if conv_output_size(x.shape[2], k, stride, padding) < 1 or \
            conv_output_size(x.shape[3], k, stride, padding) < 1:
        raise ShapeMismatch(f"kernel {k} too large for input {x.shape[2:]} with padding {padding}")
    if stride == 1:
        y, buf = _conv_s1(x, w, padding)
        cache = ("s1", buf)
    else:
        cols, (ho, wo) = im2col(x, k, stride, padding)
        y = (w.reshape(o, -1) @ cols).reshape(x.shape[0], o, ho, wo)
        cache = ("cols", cols)
    if b is not None:
        y += b.reshape(1, -1, 1, 1)
    return y, cache


def conv2d_backward(x, w, dy, stride, padding, cache=None, need_dx=True):
    """Returns ``(dx, dw, db)``; ``dx`` is ``None`` when not requested."""
    o, c, k, _ = w.shape
    n = x.shape[0]
    db = dy.sum(axis=(0, 2, 3))
    if stride == 1:
        buf = cache[1] if cache is not None and cache[0] == "s1" else _pad_flat(x, padding, k)
        dw = _conv_s1_weight_grad(buf, dy, k, x.shape[3] + 2 * padding)
        dx = None
        if need_dx:
            back_pad = k - 1 - padding
            if back_pad >= 0:
                flipped = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
                dx = _conv_s1(dy, flipped, back_pad)[0]
            else:
                dcols = w.reshape(o, -1).T @ dy.reshape(n, o, -1)
                dx = col2im(dcols, x.shape, k, stride, padding)
        return dx, dw, db
    cols = cache[1] if cache is not None and cache[0] == "cols" else im2col(x, k, stride, padding)[0]
    dym = dy.reshape(n, o, -1)
    dw = np.einsum("nol,nkl->ok", dym, cols, optimize=True).reshape(w.shape)
    dx = None
    if need_dx:
        dcols = w.reshape(o, -1).T @ dym
        dx = col2im(dcols, x.shape, k, stride, padding)
    return dx, dw, db


def conv2d_direct(x, w, b=None, stride=1, padding=0):
    """Loop-over-output-pixels reference convolution (test oracle)."""
    _check_conv(x, w, b)
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(wd, k, stride, padding)
    y = np.zeros((n, o, ho, wo), dtype=np.result_type(x, w))
    for i in range(ho):
        for j in range(wo):
            patch = xp[:, :, i * stride:i * stride + k, j * stride:j * stride + k]
            y[:, :, i, j] = np.tensordot(patch, w, axes=([1, 2, 3], [1, 2, 3]))
    if b is not None:
        y += b.reshape(1, -1, 1, 1)
    return y


# -- transposed convolution (weight layout Cin, Cout, k, k) ------------------

def _check_tconv(x, w, b):
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[0] or w.shape[2] != w.shape[3]:
        raise ShapeMismatch(f"transposed conv expects NCHW input and (Cin, Cout, k, k) weight, "
                            f"got {x.shape}, {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeMismatch(f"bias shape {b.shape} does not match {w.shape[1]} outputs")


def transposed_conv2d_forward(x, w, b=None, stride=2):
    _check_tconv(x, w, b)
    n, c, h, wd = x.shape
    _, o, k, _ = w.shape
    taps = w.reshape(c, o * k * k).T @ x.reshape(n, c, h * wd)      # (n, o*k*k, h*w)
    taps = taps.reshape(n, o, k, k, h, wd)
    if k == stride:
        y = taps.transpose(0, 1, 4, 2, 5, 3).reshape(n, o, h * k, wd * k)
    else:
        y = np.zeros((n, o, stride * (h - 1) + k, stride * (wd - 1) + k), dtype=taps.dtype)
        for a in range(k):
            for bb in range(k):
                y[:, :, a:a + stride * (h - 1) + 1:stride, bb:bb + stride * (wd - 1) + 1:stride] += taps[:, :, a, bb]
    if b is not None:
        y += b.reshape(1, -1, 1, 1)
    return y


def _gather_taps(dy, k, stride, h, wd):
    n, o = dy.shape[:2]
    if k == stride:
        return dy.reshape(n, o, h, k, wd, k).transpose(0, 1, 3, 5, 2, 4).reshape(n, o * k * k, h * wd)
    g = np.empty((n, o, k, k, h, wd), dtype=dy.dtype)
    for a in range(k):
        for bb in range(k):
            g[:, :, a, bb] = dy[:, :, a:a + stride * (h - 1) + 1:stride, bb:bb + stride * (wd - 1) + 1:stride]
    return g.reshape(n, o * k * k, h * wd)


def transposed_conv2d_backward(x, w, dy, stride=2, need_dx=True):
    n, c, h, wd = x.shape
    _, o, k, _ = w.shape
    g = _gather_taps(dy, k, stride, h, wd)                          # (n, o*k*k, h*w)
    xm = x.reshape(n, c, h * wd)
    dw = np.zeros((c, o * k * k), dtype=dy.dtype)
    for i in range(n):
        dw += xm[i] @ g[i].T
    dx = (w.reshape(c, o * k * k) @ g).reshape(x.shape) if need_dx else None
    return dx, dw.reshape(w.shape), dy.sum(axis=(0, 2, 3))


# -- pooling -----------------------------------------------------------------

def maxpool2d_forward(x, k=2):
    """Non-overlapping max pooling; returns ``(y, argmax)`` with first-max tie break."""
    n, c, h, w = x.shape
    if h % k or w % k:
        raise OddSpatialDim(f"spatial dims {h}x{w} not divisible by pool size {k}")
    win = x.reshape(n, c, h // k, k, w // k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // k, w // k, k * k)
    arg = win.argmax(axis=-1)
    y = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return y, arg


def maxpool2d_backward(dy, arg, x_shape, k=2):
    n, c, h, w = x_shape
    dwin = np.zeros((n, c, h // k, w // k, k * k), dtype=dy.dtype)
    np.put_along_axis(dwin, arg[..., None], dy[..., None], axis=-1)
    return dwin.reshape(n, c, h // k, w // k, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(x_shape)
