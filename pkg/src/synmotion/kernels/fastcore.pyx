# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in pyref.py. Same contracts and signatures;
plain sequential loops (weights transposed internally so the inner loops run
over contiguous memory), no threading, deterministic."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def conv1d_forward(double[:, :, ::1] x, double[:, :, ::1] w, double[::1] b,
                   int stride, int pad):
    cdef Py_ssize_t B = x.shape[0], T = x.shape[1], Cin = x.shape[2]
    cdef Py_ssize_t Cout = w.shape[0], K = w.shape[2]
    cdef Py_ssize_t To = (T + 2 * pad - K) // stride + 1
    # (K, Cout, Cin) layout: contiguous over the input-channel inner loop
    wt_arr = np.ascontiguousarray(np.transpose(np.asarray(w), (2, 0, 1)))
    cdef double[:, :, ::1] wt = wt_arr
    out = np.empty((B, To, Cout))
    cdef double[:, :, ::1] y = out
    cdef Py_ssize_t bi, t, oc, dt, ic, ti, base
    cdef double acc
    for bi in range(B):
        for t in range(To):
            base = t * stride - pad
            for oc in range(Cout):
                acc = b[oc]
                for dt in range(K):
                    ti = base + dt
                    if 0 <= ti < T:
                        for ic in range(Cin):
                            acc += x[bi, ti, ic] * wt[dt, oc, ic]
                y[bi, t, oc] = acc
    return out


def conv1d_backward(double[:, :, ::1] x, double[:, :, ::1] w,
                    double[:, :, ::1] gy, int stride, int pad):
    cdef Py_ssize_t B = x.shape[0], T = x.shape[1], Cin = x.shape[2]
    cdef Py_ssize_t Cout = w.shape[0], K = w.shape[2]
    cdef Py_ssize_t To = gy.shape[1]
    wt_arr = np.ascontiguousarray(np.transpose(np.asarray(w), (2, 0, 1)))
    cdef double[:, :, ::1] wt = wt_arr
    gx_arr = np.zeros((B, T, Cin))
    gwt_arr = np.zeros((K, Cout, Cin))
    gb_arr = np.zeros(Cout)
    cdef double[:, :, ::1] gx = gx_arr
    cdef double[:, :, ::1] gwt = gwt_arr
    cdef double[::1] gb = gb_arr
    cdef Py_ssize_t bi, t, oc, dt, ic, ti, base
    cdef double g
    for bi in range(B):
        for t in range(To):
            base = t * stride - pad
            for oc in range(Cout):
                g = gy[bi, t, oc]
                gb[oc] += g
                for dt in range(K):
                    ti = base + dt
                    if 0 <= ti < T:
                        for ic in range(Cin):
                            gwt[dt, oc, ic] += g * x[bi, ti, ic]
                            gx[bi, ti, ic] += g * wt[dt, oc, ic]
    gw_arr = np.ascontiguousarray(np.transpose(gwt_arr, (1, 2, 0)))
    return gx_arr, gw_arr, gb_arr


def nearest_code(double[:, ::1] x, double[:, ::1] cb):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], K = cb.shape[0]
    out = np.empty(n, dtype=np.int64)
    cdef long long[::1] idx = out
    cdef Py_ssize_t i, k, j
    cdef double best, dist, diff
    cdef Py_ssize_t bk
    for i in range(n):
        best = -1.0
        bk = 0
        for k in range(K):
            dist = 0.0
            for j in range(d):
                diff = x[i, j] - cb[k, j]
                dist += diff * diff
            if best < 0.0 or dist < best:
                best = dist
                bk = k
        idx[i] = bk
    return out
