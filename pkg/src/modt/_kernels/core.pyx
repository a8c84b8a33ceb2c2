# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: fused softmax / layernorm / relu forward+backward.

Matrix products stay on BLAS through numpy in both backends; these kernels
cover the bandwidth-bound ops where fusing away temporaries pays off. The
causal softmax only ever touches the lower triangle, so masked weights are
exact zeros by construction.
"""

import numpy as np

cimport cython
from libc.math cimport exp, sqrt

ctypedef fused real:
    float
    double

NAME = "compiled"


def softmax_fwd(real[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    out_np = np.empty((n, d), dtype=np.asarray(x).dtype)
    cdef real[:, ::1] out = out_np
    cdef Py_ssize_t i, j
    cdef real m, s, v
    for i in range(n):
        m = x[i, 0]
        for j in range(1, d):
            if x[i, j] > m:
                m = x[i, j]
        s = 0
        for j in range(d):
            v = <real>exp(x[i, j] - m)
            out[i, j] = v
            s += v
        for j in range(d):
            out[i, j] /= s
    return out_np


def softmax_bwd(real[:, ::1] y, real[:, ::1] dy):
    cdef Py_ssize_t n = y.shape[0], d = y.shape[1]
    out_np = np.empty((n, d), dtype=np.asarray(y).dtype)
    cdef real[:, ::1] dx = out_np
    cdef Py_ssize_t i, j
    cdef real inner
    for i in range(n):
        inner = 0
        for j in range(d):
            inner += y[i, j] * dy[i, j]
        for j in range(d):
            dx[i, j] = y[i, j] * (dy[i, j] - inner)
    return out_np


def causal_softmax_fwd(real[:, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], t = x.shape[1]
    out_np = np.zeros((n, t, t), dtype=np.asarray(x).dtype)
    cdef real[:, :, ::1] out = out_np
    cdef Py_ssize_t b, i, j
    cdef real m, s, v
    for b in range(n):
        for i in range(t):
            m = x[b, i, 0]
            for j in range(1, i + 1):
                if x[b, i, j] > m:
                    m = x[b, i, j]
            s = 0
            for j in range(i + 1):
                v = <real>exp(x[b, i, j] - m)
                out[b, i, j] = v
                s += v
            for j in range(i + 1):
                out[b, i, j] /= s
    return out_np


def causal_softmax_bwd(real[:, :, ::1] y, real[:, :, ::1] dy):
    cdef Py_ssize_t n = y.shape[0], t = y.shape[1]
    out_np = np.zeros((n, t, t), dtype=np.asarray(y).dtype)
    cdef real[:, :, ::1] dx = out_np
    cdef Py_ssize_t b, i, j
    cdef real inner
    for b in range(n):
        for i in range(t):
            inner = 0
            for j in range(i + 1):
                inner += y[b, i, j] * dy[b, i, j]
            for j in range(i + 1):
                dx[b, i, j] = y[b, i, j] * (dy[b, i, j] - inner)
    return out_np


def layernorm_fwd(real[:, ::1] x, real[::1] gain, real[::1] bias, double eps):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    dt = np.asarray(x).dtype
    y_np = np.empty((n, d), dtype=dt)
    mean_np = np.empty(n, dtype=dt)
    rstd_np = np.empty(n, dtype=dt)
    cdef real[:, ::1] y = y_np
    cdef real[::1] mean = mean_np, rstd = rstd_np
    cdef Py_ssize_t i, j
    cdef real mu, var, xc, r
    for i in range(n):
        mu = 0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0
        for j in range(d):
            xc = x[i, j] - mu
            var += xc * xc
        var /= d
        r = <real>(1.0 / sqrt(var + eps))
        mean[i] = mu
        rstd[i] = r
        for j in range(d):
            y[i, j] = (x[i, j] - mu) * r * gain[j] + bias[j]
    return y_np, mean_np, rstd_np


def layernorm_bwd(real[:, ::1] x, real[::1] gain, real[::1] mean,
                  real[::1] rstd, real[:, ::1] dy):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    dt = np.asarray(x).dtype
    dx_np = np.empty((n, d), dtype=dt)
    dg_np = np.zeros(d, dtype=dt)
    db_np = np.zeros(d, dtype=dt)
    cdef real[:, ::1] dx = dx_np
    cdef real[::1] dg = dg_np, db = db_np
    cdef Py_ssize_t i, j
    cdef real m1, m2, xhat, dyg, r, mu
    for i in range(n):
        mu = mean[i]
        r = rstd[i]
        m1 = 0
        m2 = 0
        for j in range(d):
            xhat = (x[i, j] - mu) * r
            dyg = dy[i, j] * gain[j]
            m1 += dyg
            m2 += dyg * xhat
            dg[j] += dy[i, j] * xhat
            db[j] += dy[i, j]
        m1 /= d
        m2 /= d
        for j in range(d):
            xhat = (x[i, j] - mu) * r
            dx[i, j] = (dy[i, j] * gain[j] - m1 - xhat * m2) * r
    return dx_np, dg_np, db_np


def relu_fwd(real[::1] x):
    cdef Py_ssize_t n = x.shape[0]
    out_np = np.empty(n, dtype=np.asarray(x).dtype)
    cdef real[::1] out = out_np
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = x[i] if x[i] > 0 else 0
    return out_np


def relu_bwd(real[::1] x, real[::1] dy):
    cdef Py_ssize_t n = x.shape[0]
    out_np = np.empty(n, dtype=np.asarray(x).dtype)
    cdef real[::1] dx = out_np
    cdef Py_ssize_t i
    for i in range(n):
        dx[i] = dy[i] if x[i] > 0 else 0
    return out_np
