# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled convolution kernels (OpenMP).

Direct-form loops over a zero-padded copy of the input so the hot loops carry
no bounds tests. Parallelism is owner-computes: each (batch, channel) slab of
the output belongs to one thread and is accumulated sequentially, so results
are bitwise reproducible for any thread count.
"""

import numpy as np

cimport numpy as cnp
from cython.parallel cimport prange

ctypedef fused real:
    float
    double


def _np_dtype(arr):
    return np.float32 if arr.itemsize == 4 else np.float64


def conv2d_forward(real[:, :, :, ::1] x, real[:, :, :, ::1] w,
                   int dilation, int padding):
    cdef Py_ssize_t n = x.shape[0], ci = x.shape[1]
    cdef Py_ssize_t h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t co = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t oh = h + 2 * padding - dilation * (k - 1)
    cdef Py_ssize_t ow = wd + 2 * padding - dilation * (k - 1)

    if real is float:
        dt = np.float32
    else:
        dt = np.float64
    xp_arr = np.zeros((n, ci, h + 2 * padding, wd + 2 * padding), dtype=dt)
    xp_arr[:, :, padding:padding + h, padding:padding + wd] = np.asarray(x)
    y_arr = np.zeros((n, co, oh, ow), dtype=dt)

    cdef real[:, :, :, ::1] xp = xp_arr
    cdef real[:, :, :, ::1] y = y_arr
    cdef Py_ssize_t idx, b, o, c, i, j, p, q
    cdef real wv

    with nogil:
        for idx in prange(n * co, schedule='static'):
            b = idx // co
            o = idx % co
            for c in range(ci):
                for i in range(k):
                    for j in range(k):
                        wv = w[o, c, i, j]
                        for p in range(oh):
                            for q in range(ow):
                                y[b, o, p, q] += wv * xp[b, c, p + i * dilation,
                                                         q + j * dilation]
    return y_arr


def conv2d_backward_input(real[:, :, :, ::1] dy, real[:, :, :, ::1] w,
                          Py_ssize_t in_h, Py_ssize_t in_w,
                          int dilation, int padding):
    cdef Py_ssize_t n = dy.shape[0], co = dy.shape[1]
    cdef Py_ssize_t oh = dy.shape[2], ow = dy.shape[3]
    cdef Py_ssize_t ci = w.shape[1], k = w.shape[2]
    # gather form: pad dy by (k-1)*dilation so the transposed correlation
    # needs no index tests
    cdef Py_ssize_t pd = (k - 1) * dilation

    if real is float:
        dt = np.float32
    else:
        dt = np.float64
    dyp_arr = np.zeros((n, co, oh + 2 * pd, ow + 2 * pd), dtype=dt)
    dyp_arr[:, :, pd:pd + oh, pd:pd + ow] = np.asarray(dy)
    dx_arr = np.zeros((n, ci, in_h, in_w), dtype=dt)

    cdef real[:, :, :, ::1] dyp = dyp_arr
    cdef real[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t idx, b, c, o, i, j, a, e
    cdef real wv

    with nogil:
        for idx in prange(n * ci, schedule='static'):
            b = idx // ci
            c = idx % ci
            for o in range(co):
                for i in range(k):
                    for j in range(k):
                        wv = w[o, c, k - 1 - i, k - 1 - j]
                        for a in range(in_h):
                            for e in range(in_w):
                                dx[b, c, a, e] += wv * dyp[b, o, a + padding + i * dilation,
                                                           e + padding + j * dilation]
    return dx_arr


def conv2d_backward_weight(real[:, :, :, ::1] dy, real[:, :, :, ::1] x,
                           Py_ssize_t k, int dilation, int padding):
    cdef Py_ssize_t n = dy.shape[0], co = dy.shape[1]
    cdef Py_ssize_t oh = dy.shape[2], ow = dy.shape[3]
    cdef Py_ssize_t ci = x.shape[1]
    cdef Py_ssize_t h = x.shape[2], wd = x.shape[3]

    if real is float:
        dt = np.float32
    else:
        dt = np.float64
    xp_arr = np.zeros((n, ci, h + 2 * padding, wd + 2 * padding), dtype=dt)
    xp_arr[:, :, padding:padding + h, padding:padding + wd] = np.asarray(x)
    dw_arr = np.zeros((co, ci, k, k), dtype=dt)

    cdef real[:, :, :, ::1] xp = xp_arr
    cdef real[:, :, :, ::1] dw = dw_arr
    cdef Py_ssize_t idx, o, c, i, j, b, p, q
    cdef real acc

    with nogil:
        for idx in prange(co * ci, schedule='static'):
            o = idx // ci
            c = idx % ci
            for i in range(k):
                for j in range(k):
                    acc = 0
                    for b in range(n):
                        for p in range(oh):
                            for q in range(ow):
                                acc = acc + dy[b, o, p, q] * xp[b, c, p + i * dilation,
                                                                q + j * dilation]
                    dw[o, c, i, j] = acc
    return dw_arr
