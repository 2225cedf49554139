# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: direct-loop convolution/pool/dense, float64 and int8.

Same contracts as kernels_numpy; integer ops accumulate in C int64 and apply
the fixed-point requantization inline per output element. Results are
bit-identical to the numpy backend (both compute exact integer arithmetic).
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


cdef inline long long _imax(long long a, long long b) nogil:
    return a if a > b else b


cdef inline int _out_hw(int in_hw, int kernel, int stride, bint pad_same) nogil:
    if pad_same:
        return (in_hw + stride - 1) // stride
    return (in_hw - kernel) // stride + 1


cdef inline int _pad_before(int in_hw, int kernel, int stride) nogil:
    cdef int out = (in_hw + stride - 1) // stride
    cdef int total = (out - 1) * stride + kernel - in_hw
    if total < 0:
        total = 0
    return total // 2


cdef inline long long _requant(long long acc, long long m0, int ts) nogil:
    """round_half_away(acc * m0 / 2^ts); |acc| <= 2^31 keeps p below 2^62."""
    cdef long long p = acc * m0
    cdef long long half
    if ts >= 63:
        return 0
    if ts <= 0:
        return p << (-ts)
    half = (<long long> 1) << (ts - 1)
    if p >= 0:
        return (p + half) >> ts
    return -(((-p) + half) >> ts)


cdef inline signed char _clamp_i8(long long v) nogil:
    if v < -128:
        return -128
    if v > 127:
        return 127
    return <signed char> v


def conv2d_float(x, w, b, int stride, bint pad_same):
    cdef double[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, :, :, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef int h = xv.shape[0], wd = xv.shape[1], c = xv.shape[2]
    cdef int out_c = wv.shape[0], kh = wv.shape[1], kw = wv.shape[2]
    cdef int oh = _out_hw(h, kh, stride, pad_same)
    cdef int ow = _out_hw(wd, kw, stride, pad_same)
    cdef int ph = _pad_before(h, kh, stride) if pad_same else 0
    cdef int pw = _pad_before(wd, kw, stride) if pad_same else 0
    out = np.empty((oh, ow, out_c), dtype=np.float64)
    cdef double[:, :, ::1] ov = out
    cdef int oy, ox, oc, ky, kx, ic, iy, ix
    cdef double acc
    with nogil:
        for oy in range(oh):
            for ox in range(ow):
                for oc in range(out_c):
                    acc = bv[oc]
                    for ky in range(kh):
                        iy = oy * stride + ky - ph
                        if iy < 0 or iy >= h:
                            continue
                        for kx in range(kw):
                            ix = ox * stride + kx - pw
                            if ix < 0 or ix >= wd:
                                continue
                            for ic in range(c):
                                acc += xv[iy, ix, ic] * wv[oc, ky, kx, ic]
                    ov[oy, ox, oc] = acc
    return out


def maxpool_float(x, int window, int stride):
    cdef double[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef int h = xv.shape[0], wd = xv.shape[1], c = xv.shape[2]
    cdef int oh = _out_hw(h, window, stride, False)
    cdef int ow = _out_hw(wd, window, stride, False)
    out = np.empty((oh, ow, c), dtype=np.float64)
    cdef double[:, :, ::1] ov = out
    cdef int oy, ox, ch, ky, kx
    cdef double best, v
    with nogil:
        for oy in range(oh):
            for ox in range(ow):
                for ch in range(c):
                    best = xv[oy * stride, ox * stride, ch]
                    for ky in range(window):
                        for kx in range(window):
                            v = xv[oy * stride + ky, ox * stride + kx, ch]
                            if v > best:
                                best = v
                    ov[oy, ox, ch] = best
    return out


def dense_float(x, w, b):
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef int out_c = wv.shape[0], in_c = wv.shape[1]
    out = np.empty(out_c, dtype=np.float64)
    cdef double[::1] ov = out
    cdef int oc, ic
    cdef double acc
    with nogil:
        for oc in range(out_c):
            acc = bv[oc]
            for ic in range(in_c):
                acc += wv[oc, ic] * xv[ic]
            ov[oc] = acc
    return out


def conv2d_int8(xq, wq, bq, int x_zp, long long m0, int shift, int out_zp,
                int stride, bint pad_same):
    cdef signed char[:, :, ::1] xv = np.ascontiguousarray(xq, dtype=np.int8)
    cdef signed char[:, :, :, ::1] wv = np.ascontiguousarray(wq, dtype=np.int8)
    cdef int[::1] bv = np.ascontiguousarray(bq, dtype=np.int32)
    cdef int h = xv.shape[0], wd = xv.shape[1], c = xv.shape[2]
    cdef int out_c = wv.shape[0], kh = wv.shape[1], kw = wv.shape[2]
    cdef int oh = _out_hw(h, kh, stride, pad_same)
    cdef int ow = _out_hw(wd, kw, stride, pad_same)
    cdef int ph = _pad_before(h, kh, stride) if pad_same else 0
    cdef int pw = _pad_before(wd, kw, stride) if pad_same else 0
    cdef int ts = 31 + shift
    out = np.empty((oh, ow, out_c), dtype=np.int8)
    cdef signed char[:, :, ::1] ov = out
    cdef int oy, ox, oc, ky, kx, ic, iy, ix
    cdef long long acc
    with nogil:
        for oy in range(oh):
            for ox in range(ow):
                for oc in range(out_c):
                    acc = bv[oc]
                    for ky in range(kh):
                        iy = oy * stride + ky - ph
                        if iy < 0 or iy >= h:
                            continue
                        for kx in range(kw):
                            ix = ox * stride + kx - pw
                            if ix < 0 or ix >= wd:
                                continue
                            for ic in range(c):
                                acc += (<long long> xv[iy, ix, ic] - x_zp) * wv[oc, ky, kx, ic]
                    ov[oy, ox, oc] = _clamp_i8(_requant(acc, m0, ts) + out_zp)
    return out


def dense_int8(xq, wq, bq, int x_zp, long long m0, int shift, int out_zp):
    cdef signed char[::1] xv = np.ascontiguousarray(xq, dtype=np.int8)
    cdef signed char[:, ::1] wv = np.ascontiguousarray(wq, dtype=np.int8)
    cdef int[::1] bv = np.ascontiguousarray(bq, dtype=np.int32)
    cdef int out_c = wv.shape[0], in_c = wv.shape[1]
    cdef int ts = 31 + shift
    out = np.empty(out_c, dtype=np.int8)
    cdef signed char[::1] ov = out
    cdef int oc, ic
    cdef long long acc
    with nogil:
        for oc in range(out_c):
            acc = bv[oc]
            for ic in range(in_c):
                acc += (<long long> xv[ic] - x_zp) * wv[oc, ic]
            ov[oc] = _clamp_i8(_requant(acc, m0, ts) + out_zp)
    return out


def maxpool_int8(xq, int window, int stride):
    cdef signed char[:, :, ::1] xv = np.ascontiguousarray(xq, dtype=np.int8)
    cdef int h = xv.shape[0], wd = xv.shape[1], c = xv.shape[2]
    cdef int oh = _out_hw(h, window, stride, False)
    cdef int ow = _out_hw(wd, window, stride, False)
    out = np.empty((oh, ow, c), dtype=np.int8)
    cdef signed char[:, :, ::1] ov = out
    cdef int oy, ox, ch, ky, kx
    cdef signed char best, v
    with nogil:
        for oy in range(oh):
            for ox in range(ow):
                for ch in range(c):
                    best = xv[oy * stride, ox * stride, ch]
                    for ky in range(window):
                        for kx in range(window):
                            v = xv[oy * stride + ky, ox * stride + kx, ch]
                            if v > best:
                                best = v
                    ov[oy, ox, ch] = best
    return out


BACKEND_NAME = "cython"
