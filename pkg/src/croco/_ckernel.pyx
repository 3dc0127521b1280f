# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-bag kernels; same contract as ``croco._pykernel``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, tanh

cnp.import_array()

NAME = "cython"

cdef enum:
    IDENTITY = 0
    TANH = 1
    SIGMOID = 2


cdef inline double _sigmoid(double x) nogil:
    cdef double e
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


cdef inline double _tanh(double x) nogil:
    # one exp is cheaper than libm tanh; near zero the quotient loses digits
    cdef double e
    if x > 20.0:
        return 1.0
    if x < -20.0:
        return -1.0
    if -0.25 < x < 0.25:
        return tanh(x)
    e = exp(2.0 * x)
    return (e - 1.0) / (e + 1.0)


def sigmoid(x):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] flat = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty_like(flat)
    cdef Py_ssize_t i
    for i in range(flat.shape[0]):
        out[i] = _sigmoid(flat[i])
    return out.reshape(np.shape(x))


def dense_forward(const double[:, ::1] x, const double[:, ::1] W, const double[::1] b, int act):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], m = W.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double xik
    cdef double* o
    cdef const double* wk
    if W.shape[0] != d or b.shape[0] != m:
        raise ValueError("dense_forward: shape mismatch")
    out_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    if n == 0 or m == 0:
        return out_arr
    with nogil:
        for i in range(n):
            o = &out[i, 0]
            for j in range(m):
                o[j] = b[j]
            for k in range(d):
                xik = x[i, k]
                wk = &W[k, 0]
                for j in range(m):
                    o[j] += xik * wk[j]
            if act == TANH:
                for j in range(m):
                    o[j] = _tanh(o[j])
            elif act == SIGMOID:
                for j in range(m):
                    o[j] = _sigmoid(o[j])
    return out_arr


def dense_backward(const double[:, ::1] x, const double[:, ::1] W, const double[:, ::1] out,
                   int act, const double[:, ::1] gout):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], m = W.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double g, o, acc
    gW_arr = np.zeros((d, m), dtype=np.float64)
    gb_arr = np.zeros(m, dtype=np.float64)
    gx_arr = np.empty((n, d), dtype=np.float64)
    gpre_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] gW = gW_arr
    cdef double[::1] gb = gb_arr
    cdef double[:, ::1] gx = gx_arr
    cdef double[:, ::1] gpre = gpre_arr
    with nogil:
        for i in range(n):
            for j in range(m):
                g = gout[i, j]
                o = out[i, j]
                if act == TANH:
                    g = g * (1.0 - o * o)
                elif act == SIGMOID:
                    g = g * o * (1.0 - o)
                gpre[i, j] = g
                gb[j] += g
            for k in range(d):
                acc = 0.0
                for j in range(m):
                    gW[k, j] += x[i, k] * gpre[i, j]
                    acc += gpre[i, j] * W[k, j]
                gx[i, k] = acc
    return gW_arr, gb_arr, gx_arr


def softmax(const double[::1] s):
    cdef Py_ssize_t n = s.shape[0], j
    cdef double mx, tot
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    mx = s[0]
    for j in range(1, n):
        if s[j] > mx:
            mx = s[j]
    tot = 0.0
    for j in range(n):
        out[j] = exp(s[j] - mx)
        tot += out[j]
    for j in range(n):
        out[j] /= tot
    return out_arr


def attention_forward(const double[:, ::1] z, const double[:, ::1] V, const double[::1] w):
    cdef Py_ssize_t n = z.shape[0], h = z.shape[1], L = V.shape[0]
    cdef Py_ssize_t j, l, k
    cdef double acc, mx, tot
    if V.shape[1] != h or w.shape[0] != L:
        raise ValueError("attention_forward: shape mismatch")
    u_arr = np.empty((n, L), dtype=np.float64)
    a_arr = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] u = u_arr
    cdef double[::1] a = a_arr
    with nogil:
        for j in range(n):
            acc = 0.0
            for l in range(L):
                mx = 0.0
                for k in range(h):
                    mx += V[l, k] * z[j, k]
                mx = _tanh(mx)
                u[j, l] = mx
                acc += mx * w[l]
            a[j] = acc
        mx = a[0]
        for j in range(1, n):
            if a[j] > mx:
                mx = a[j]
        tot = 0.0
        for j in range(n):
            a[j] = exp(a[j] - mx)
            tot += a[j]
        for j in range(n):
            a[j] /= tot
    return u_arr, a_arr


def attention_backward(const double[:, ::1] z, const double[:, ::1] V, const double[::1] w,
                       const double[:, ::1] u, const double[::1] a, const double[::1] ga):
    cdef Py_ssize_t n = z.shape[0], h = z.shape[1], L = V.shape[0]
    cdef Py_ssize_t j, l, k
    cdef double dot, gs, gp
    gV_arr = np.zeros((L, h), dtype=np.float64)
    gw_arr = np.zeros(L, dtype=np.float64)
    gz_arr = np.zeros((n, h), dtype=np.float64)
    cdef double[:, ::1] gV = gV_arr
    cdef double[::1] gw = gw_arr
    cdef double[:, ::1] gz = gz_arr
    with nogil:
        dot = 0.0
        for j in range(n):
            dot += ga[j] * a[j]
        for j in range(n):
            gs = a[j] * (ga[j] - dot)
            for l in range(L):
                gw[l] += u[j, l] * gs
                gp = gs * w[l] * (1.0 - u[j, l] * u[j, l])
                for k in range(h):
                    gV[l, k] += gp * z[j, k]
                    gz[j, k] += gp * V[l, k]
    return gV_arr, gw_arr, gz_arr
