"""Vectorized numpy kernels: the portable fallback backend.

Float ops run in float64 (im2col + BLAS matmul). Integer ops also go through
the float64 matmul, which is exact here: every operand is an integer with
|x - zp| <= 255 and |w| <= 127, so products stay <= 32385 and any realistic
accumulator is far below 2^53 — each partial sum is an exactly representable
integer regardless of summation order. This makes the backend bit-identical
to a pure integer implementation.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "numpy"


def same_padding(in_hw: int, kernel: int, stride: int) -> tuple[int, int]:
    """(before, after) padding so that out = ceil(in / stride)."""
    out = -(-in_hw // stride)
    total = max((out - 1) * stride + kernel - in_hw, 0)
    before = total // 2
    return before, total - before


def _out_hw(in_hw, kernel, stride, pad_same):
    if pad_same:
        return -(-in_hw // stride)
    return (in_hw - kernel) // stride + 1


def _im2col(x, kh, kw, stride, oh, ow):
    """(H, W, C) -> (oh*ow, kh*kw*C) patch matrix, rows in output-pixel order."""
    c = x.shape[2]
    cols = np.empty((oh, ow, kh, kw, c), dtype=x.dtype)
    for ky in range(kh):
        for kx in range(kw):
            cols[:, :, ky, kx, :] = x[
                ky:ky + (oh - 1) * stride + 1:stride,
                kx:kx + (ow - 1) * stride + 1:stride,
                :,
            ]
    return cols.reshape(oh * ow, kh * kw * c)


def conv2d_float(x, w, b, stride, pad_same):
    """x: (H, W, C) float; w: (outC, kH, kW, inC); returns (oh, ow, outC) f64."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    h, wd, _ = x.shape
    out_c, kh, kw, _ = w.shape
    oh = _out_hw(h, kh, stride, pad_same)
    ow = _out_hw(wd, kw, stride, pad_same)
    if pad_same:
        ph0, ph1 = same_padding(h, kh, stride)
        pw0, pw1 = same_padding(wd, kw, stride)
        x = np.pad(x, ((ph0, ph1), (pw0, pw1), (0, 0)))
    cols = _im2col(x, kh, kw, stride, oh, ow)
    out = cols @ w.reshape(out_c, -1).T + np.asarray(b, dtype=np.float64)
    return out.reshape(oh, ow, out_c)


def maxpool_float(x, window, stride):
    x = np.asarray(x, dtype=np.float64)
    h, wd, c = x.shape
    oh = _out_hw(h, window, stride, False)
    ow = _out_hw(wd, window, stride, False)
    out = np.full((oh, ow, c), -np.inf)
    for ky in range(window):
        for kx in range(window):
            np.maximum(out, x[ky:ky + (oh - 1) * stride + 1:stride,
                              kx:kx + (ow - 1) * stride + 1:stride, :], out=out)
    return out


def dense_float(x, w, b):
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    return w @ x + np.asarray(b, dtype=np.float64)


def requantize_i64(acc, m0, shift):
    """round_half_away(acc * m0 / 2^(31+shift)) over an int64 array.

    Valid for |acc| <= 2^31 (guaranteed by the pack-time accumulator bound):
    the product stays below 2^62 and the rounding bias below 2^62, so all
    intermediates fit in int64. ts >= 63 underflows every representable
    accumulator to zero.
    """
    acc = np.asarray(acc, dtype=np.int64)
    ts = 31 + int(shift)
    if ts >= 63:
        return np.zeros_like(acc)
    if ts <= 0:
        return acc * np.int64(m0) << np.int64(-ts)
    p = acc * np.int64(m0)
    half = np.int64(1) << np.int64(ts - 1)
    q = (np.abs(p) + half) >> np.int64(ts)
    return np.where(p < 0, -q, q)


def _finish_int8(acc, m0, shift, out_zp):
    out = requantize_i64(acc, m0, shift) + np.int64(out_zp)
    return np.clip(out, -128, 127).astype(np.int8)


def conv2d_int8(xq, wq, bq, x_zp, m0, shift, out_zp, stride, pad_same):
    """Zero-point-corrected int8 conv, int32-exact accumulation, requantized.

    xq: (H, W, C) int8; wq: (outC, kH, kW, inC) int8; bq: (outC,) int32.
    """
    h, wd, _ = xq.shape
    out_c, kh, kw, _ = wq.shape
    oh = _out_hw(h, kh, stride, pad_same)
    ow = _out_hw(wd, kw, stride, pad_same)
    xc = xq.astype(np.int32) - np.int32(x_zp)
    if pad_same:
        ph0, ph1 = same_padding(h, kh, stride)
        pw0, pw1 = same_padding(wd, kw, stride)
        xc = np.pad(xc, ((ph0, ph1), (pw0, pw1), (0, 0)))  # zeros = zero point
    cols = _im2col(xc.astype(np.float64), kh, kw, stride, oh, ow)
    acc = cols @ wq.reshape(out_c, -1).T.astype(np.float64)
    acc = np.rint(acc).astype(np.int64) + bq.astype(np.int64)
    return _finish_int8(acc, m0, shift, out_zp).reshape(oh, ow, out_c)


def dense_int8(xq, wq, bq, x_zp, m0, shift, out_zp):
    xc = (xq.astype(np.int32) - np.int32(x_zp)).astype(np.float64)
    acc = wq.astype(np.float64) @ xc
    acc = np.rint(acc).astype(np.int64) + bq.astype(np.int64)
    return _finish_int8(acc, m0, shift, out_zp)


def maxpool_int8(xq, window, stride):
    h, wd, c = xq.shape
    oh = _out_hw(h, window, stride, False)
    ow = _out_hw(wd, window, stride, False)
    out = np.full((oh, ow, c), -128, dtype=np.int8)
    for ky in range(window):
        for kx in range(window):
            np.maximum(out, xq[ky:ky + (oh - 1) * stride + 1:stride,
                               kx:kx + (ow - 1) * stride + 1:stride, :], out=out)
    return out
