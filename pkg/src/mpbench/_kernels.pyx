# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: 3x3x3 same-padded convolution (forward and both
gradients), temporal squared differences and Gaussian mask sums.

All arrays are C-contiguous float64. Zero padding is handled by clipping
loop bounds, so no padded copy of the input is made.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()

NAME = "cython"


cdef inline Py_ssize_t _lo(Py_ssize_t k) noexcept nogil:
    return 1 - k if k < 1 else 0


cdef inline Py_ssize_t _hi(Py_ssize_t n, Py_ssize_t k) noexcept nogil:
    return n + 1 - k if k > 1 else n


def conv3d_forward(x, kernel, bias):
    cdef double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, :, :, :, ::1] kv = np.ascontiguousarray(kernel, dtype=np.float64)
    cdef double[::1] bv = np.ascontiguousarray(bias, dtype=np.float64)
    cdef Py_ssize_t CI = xv.shape[0], T = xv.shape[1], H = xv.shape[2], W = xv.shape[3]
    cdef Py_ssize_t CO = kv.shape[0]
    out = np.empty((CO, T, H, W), dtype=np.float64)
    cdef double[:, :, :, ::1] ov = out
    cdef Py_ssize_t co, ci, a, b, c, t, h, w, t0, t1, h0, h1, w0, w1
    cdef double kval
    with nogil:
        for co in range(CO):
            for t in range(T):
                for h in range(H):
                    for w in range(W):
                        ov[co, t, h, w] = bv[co]
            for ci in range(CI):
                for a in range(3):
                    t0 = _lo(a); t1 = _hi(T, a)
                    for b in range(3):
                        h0 = _lo(b); h1 = _hi(H, b)
                        for c in range(3):
                            w0 = _lo(c); w1 = _hi(W, c)
                            kval = kv[co, ci, a, b, c]
                            if kval == 0.0:
                                continue
                            for t in range(t0, t1):
                                for h in range(h0, h1):
                                    for w in range(w0, w1):
                                        ov[co, t, h, w] += kval * xv[ci, t + a - 1, h + b - 1, w + c - 1]
    return out


def conv3d_backward_input(gout, kernel):
    cdef double[:, :, :, ::1] gv = np.ascontiguousarray(gout, dtype=np.float64)
    cdef double[:, :, :, :, ::1] kv = np.ascontiguousarray(kernel, dtype=np.float64)
    cdef Py_ssize_t CO = gv.shape[0], T = gv.shape[1], H = gv.shape[2], W = gv.shape[3]
    cdef Py_ssize_t CI = kv.shape[1]
    gx = np.zeros((CI, T, H, W), dtype=np.float64)
    cdef double[:, :, :, ::1] xv = gx
    cdef Py_ssize_t co, ci, a, b, c, t, h, w, t0, t1, h0, h1, w0, w1
    cdef double kval
    with nogil:
        for ci in range(CI):
            for co in range(CO):
                for a in range(3):
                    t0 = _lo(a); t1 = _hi(T, a)
                    for b in range(3):
                        h0 = _lo(b); h1 = _hi(H, b)
                        for c in range(3):
                            w0 = _lo(c); w1 = _hi(W, c)
                            kval = kv[co, ci, a, b, c]
                            if kval == 0.0:
                                continue
                            for t in range(t0, t1):
                                for h in range(h0, h1):
                                    for w in range(w0, w1):
                                        xv[ci, t + a - 1, h + b - 1, w + c - 1] += kval * gv[co, t, h, w]
    return gx


def conv3d_backward_kernel(gout, x):
    cdef double[:, :, :, ::1] gv = np.ascontiguousarray(gout, dtype=np.float64)
    cdef double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t CO = gv.shape[0], T = gv.shape[1], H = gv.shape[2], W = gv.shape[3]
    cdef Py_ssize_t CI = xv.shape[0]
    gk = np.empty((CO, CI, 3, 3, 3), dtype=np.float64)
    cdef double[:, :, :, :, ::1] kv = gk
    cdef Py_ssize_t co, ci, a, b, c, t, h, w, t0, t1, h0, h1, w0, w1
    cdef double acc
    with nogil:
        for co in range(CO):
            for ci in range(CI):
                for a in range(3):
                    t0 = _lo(a); t1 = _hi(T, a)
                    for b in range(3):
                        h0 = _lo(b); h1 = _hi(H, b)
                        for c in range(3):
                            w0 = _lo(c); w1 = _hi(W, c)
                            acc = 0.0
                            for t in range(t0, t1):
                                for h in range(h0, h1):
                                    for w in range(w0, w1):
                                        acc = acc + gv[co, t, h, w] * xv[ci, t + a - 1, h + b - 1, w + c - 1]
                            kv[co, ci, a, b, c] = acc
    return gk


def temporal_sq_diffs(x):
    cdef double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t T = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3]
    out = np.zeros(T, dtype=np.float64)
    cdef double[::1] ov = out
    cdef Py_ssize_t t, c, h, w
    cdef double d, acc
    with nogil:
        for t in range(1, T):
            acc = 0.0
            for c in range(C):
                for h in range(H):
                    for w in range(W):
                        d = xv[t, c, h, w] - xv[t - 1, c, h, w]
                        acc = acc + d * d
            ov[t] = acc
    return out


def gaussian_mask_sum(rows, cols, double sigma, Py_ssize_t height, Py_ssize_t width):
    cdef double[::1] rv = np.ascontiguousarray(rows, dtype=np.float64)
    cdef double[::1] cv = np.ascontiguousarray(cols, dtype=np.float64)
    cdef Py_ssize_t n = rv.shape[0]
    out = np.zeros((height, width), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef double denom = 2.0 * sigma * sigma
    cdef double du, dv
    cdef Py_ssize_t i, u, v
    with nogil:
        for i in range(n):
            for u in range(height):
                du = u - rv[i]
                for v in range(width):
                    dv = v - cv[i]
                    ov[u, v] += exp(-(du * du + dv * dv) / denom)
    return out
