# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: GELU, softmax, layer norm, AdamW update.

Mirrors ``_numpy_impl`` exactly (same formulas, same eps); both backends
accept float32 and float64 via fused types. Callers guarantee contiguous
pre-flattened inputs.
"""

import numpy as np

cimport cython
from libc.math cimport erf, exp, sqrt, pow

ctypedef fused floating:
    float
    double

DEF INV_SQRT2 = 0.7071067811865476
DEF INV_SQRT_2PI = 0.3989422804014327


def gelu_fwd(floating[::1] x):
    cdef Py_ssize_t i, n = x.shape[0]
    out_arr = np.empty(n, dtype=np.asarray(x).dtype)
    cdef floating[::1] out = out_arr
    with nogil:
        for i in range(n):
            out[i] = <floating>(0.5 * x[i] * (1.0 + erf(x[i] * INV_SQRT2)))
    return out_arr


def gelu_bwd(floating[::1] x, floating[::1] gy):
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double cdf, pdf
    out_arr = np.empty(n, dtype=np.asarray(x).dtype)
    cdef floating[::1] out = out_arr
    with nogil:
        for i in range(n):
            cdf = 0.5 * (1.0 + erf(x[i] * INV_SQRT2))
            pdf = INV_SQRT_2PI * exp(-0.5 * x[i] * x[i])
            out[i] = <floating>(gy[i] * (cdf + x[i] * pdf))
    return out_arr


def softmax_fwd(floating[:, ::1] x):
    cdef Py_ssize_t i, j, rows = x.shape[0], cols = x.shape[1]
    cdef double mx, total
    out_arr = np.empty((rows, cols), dtype=np.asarray(x).dtype)
    cdef floating[:, ::1] out = out_arr
    with nogil:
        for i in range(rows):
            mx = x[i, 0]
            for j in range(1, cols):
                if x[i, j] > mx:
                    mx = x[i, j]
            total = 0.0
            for j in range(cols):
                out[i, j] = <floating>exp(x[i, j] - mx)
                total += out[i, j]
            for j in range(cols):
                out[i, j] = <floating>(out[i, j] / total)
    return out_arr


def softmax_bwd(floating[:, ::1] y, floating[:, ::1] gy):
    cdef Py_ssize_t i, j, rows = y.shape[0], cols = y.shape[1]
    cdef double dot
    out_arr = np.empty((rows, cols), dtype=np.asarray(y).dtype)
    cdef floating[:, ::1] out = out_arr
    with nogil:
        for i in range(rows):
            dot = 0.0
            for j in range(cols):
                dot += gy[i, j] * y[i, j]
            for j in range(cols):
                out[i, j] = <floating>(y[i, j] * (gy[i, j] - dot))
    return out_arr


def layernorm_fwd(floating[:, ::1] x, floating[::1] gamma, floating[::1] beta,
                  double eps):
    cdef Py_ssize_t i, j, rows = x.shape[0], cols = x.shape[1]
    cdef double mu, var, rs, c
    dtype = np.asarray(x).dtype
    y_arr = np.empty((rows, cols), dtype=dtype)
    mean_arr = np.empty(rows, dtype=dtype)
    rstd_arr = np.empty(rows, dtype=dtype)
    cdef floating[:, ::1] y = y_arr
    cdef floating[::1] mean = mean_arr
    cdef floating[::1] rstd = rstd_arr
    with nogil:
        for i in range(rows):
            mu = 0.0
            for j in range(cols):
                mu += x[i, j]
            mu /= cols
            var = 0.0
            for j in range(cols):
                c = x[i, j] - mu
                var += c * c
            var /= cols
            rs = 1.0 / sqrt(var + eps)
            mean[i] = <floating>mu
            rstd[i] = <floating>rs
            for j in range(cols):
                y[i, j] = <floating>(((x[i, j] - mu) * rs) * gamma[j] + beta[j])
    return y_arr, mean_arr, rstd_arr


def layernorm_bwd(floating[:, ::1] x, floating[::1] gamma, floating[::1] mean,
                  floating[::1] rstd, floating[:, ::1] gy):
    cdef Py_ssize_t i, j, rows = x.shape[0], cols = x.shape[1]
    cdef double m1, m2, xh, dxh
    dtype = np.asarray(x).dtype
    dx_arr = np.empty((rows, cols), dtype=dtype)
    dgamma_arr = np.zeros(cols, dtype=dtype)
    dbeta_arr = np.zeros(cols, dtype=dtype)
    cdef floating[:, ::1] dx = dx_arr
    cdef floating[::1] dgamma = dgamma_arr
    cdef floating[::1] dbeta = dbeta_arr
    with nogil:
        for i in range(rows):
            m1 = 0.0
            m2 = 0.0
            for j in range(cols):
                xh = (x[i, j] - mean[i]) * rstd[i]
                dxh = gy[i, j] * gamma[j]
                m1 += dxh
                m2 += dxh * xh
                dgamma[j] += <floating>(gy[i, j] * xh)
                dbeta[j] += gy[i, j]
            m1 /= cols
            m2 /= cols
            for j in range(cols):
                xh = (x[i, j] - mean[i]) * rstd[i]
                dxh = gy[i, j] * gamma[j]
                dx[i, j] = <floating>((dxh - m1 - xh * m2) * rstd[i])
    return dx_arr, dgamma_arr, dbeta_arr


def adamw_update(floating[::1] p, floating[::1] g, floating[::1] m,
                 floating[::1] v, long step, double lr, double beta1,
                 double beta2, double eps, double weight_decay):
    cdef Py_ssize_t i, n = p.shape[0]
    cdef double bc1 = 1.0 - pow(beta1, step)
    cdef double bc2 = 1.0 - pow(beta2, step)
    with nogil:
        for i in range(n):
            m[i] = <floating>(beta1 * m[i] + (1.0 - beta1) * g[i])
            v[i] = <floating>(beta2 * v[i] + (1.0 - beta2) * g[i] * g[i])
            p[i] = <floating>(p[i] - lr * weight_decay * p[i])
            p[i] = <floating>(p[i] - lr * (m[i] / bc1) / (sqrt(v[i] / bc2) + eps))
