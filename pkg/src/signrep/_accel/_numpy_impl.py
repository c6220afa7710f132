"""Pure-numpy implementations of the hot kernels.

Shapes are pre-flattened by the callers: elementwise kernels take 1-D
arrays, row kernels take 2-D arrays normalized over the last axis. The
compiled extension in ``_kernels.pyx`` implements the same signatures;
either backend must produce identical math (same formulas, same eps).
"""

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


def gelu_fwd(x):
    # exact (erf) form, not the tanh approximation
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_bwd(x, gy):
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return gy * (cdf + x * pdf)


def softmax_fwd(x):
    # x: (rows, cols), softmax over the last axis
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_bwd(y, gy):
    dot = (gy * y).sum(axis=1, keepdims=True)
    return y * (gy - dot)


def layernorm_fwd(x, gamma, beta, eps):
    # x: (rows, cols); returns (y, mean, rstd) with per-row statistics
    mean = x.mean(axis=1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = centered * rstd[:, None]
    y = xhat * gamma + beta
    return y, mean[:, 0], rstd


def layernorm_bwd(x, gamma, mean, rstd, gy):
    xhat = (x - mean[:, None]) * rstd[:, None]
    dxhat = gy * gamma
    dgamma = (gy * xhat).sum(axis=0)
    dbeta = gy.sum(axis=0)
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = (dxhat - m1 - xhat * m2) * rstd[:, None]
    return dx, dgamma, dbeta


def adamw_update(p, g, m, v, step, lr, beta1, beta2, eps, weight_decay):
    # decoupled weight decay, then bias-corrected moment update; in place
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    p -= lr * weight_decay * p
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
