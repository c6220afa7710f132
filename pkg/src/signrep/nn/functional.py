"""Differentiable operations on :class:`~signrep.nn.tensor.Tensor`.

Elementwise math, shape surgery, attention building blocks, and the
fused losses. GELU, softmax and layer norm dispatch to the compiled
kernels when available.
"""

from __future__ import annotations

import numpy as np

from .. import _accel
from .tensor import Tensor, as_tensor, make_op, unbroadcast

# ---------------------------------------------------------------- arithmetic


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def backward(gy):
        return unbroadcast(gy, a.data.shape), unbroadcast(gy, b.data.shape)

    return make_op(out, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def backward(gy):
        return unbroadcast(gy, a.data.shape), unbroadcast(-gy, b.data.shape)

    return make_op(out, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def backward(gy):
        return (unbroadcast(gy * b.data, a.data.shape),
                unbroadcast(gy * a.data, b.data.shape))

    return make_op(out, (a, b), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(gy):
        ga = gy / b.data
        gb = -gy * a.data / (b.data * b.data)
        return unbroadcast(ga, a.data.shape), unbroadcast(gb, b.data.shape)

    return make_op(out, (a, b), backward)


def neg(a):
    a = as_tensor(a)
    return make_op(-a.data, (a,), lambda gy: (-gy,))


def matmul(a, b):
    """Batched matrix product; leading axes broadcast like np.matmul."""
    a, b = as_tensor(a), as_tensor(b)
    out = a.data @ b.data

    def backward(gy):
        ad, bd = a.data, b.data
        if ad.ndim == 1 and bd.ndim == 1:
            return gy * bd, gy * ad
        if ad.ndim == 1:
            ga = gy @ np.swapaxes(bd, -1, -2)
            gb = np.outer(ad, gy) if bd.ndim == 2 else None
            if gb is None:
                gb = ad[..., :, None] * gy[..., None, :]
                gb = unbroadcast(gb, bd.shape)
            return unbroadcast(ga, ad.shape), gb
        if bd.ndim == 1:
            ga = gy[..., None] * bd
            gb = np.swapaxes(ad, -1, -2) @ gy[..., None]
            return unbroadcast(ga, ad.shape), unbroadcast(gb[..., 0], bd.shape)
        ga = gy @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ gy
        return unbroadcast(ga, ad.shape), unbroadcast(gb, bd.shape)

    return make_op(out, (a, b), backward)


# ------------------------------------------------------------ shape surgery


def reshape(a, shape):
    a = as_tensor(a)
    src = a.data.shape
    return make_op(a.data.reshape(shape), (a,), lambda gy: (gy.reshape(src),))


def transpose(a, axes):
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_op(a.data.transpose(axes), (a,),
                   lambda gy: (gy.transpose(inv),))


def slice_(a, idx):
    a = as_tensor(a)
    out = a.data[idx]

    def backward(gy):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, gy)
        return (ga,)

    return make_op(out, (a,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(gy):
        return tuple(np.split(gy, splits, axis=axis))

    return make_op(out, tuple(tensors), backward)


def pad_time(a, before, after):
    """Zero-pad along axis 1 (the time axis of (B, T, ...) tensors)."""
    a = as_tensor(a)
    width = [(0, 0)] * a.data.ndim
    width[1] = (before, after)
    out = np.pad(a.data, width)
    t = a.data.shape[1]

    def backward(gy):
        sl = [slice(None)] * gy.ndim
        sl[1] = slice(before, before + t)
        return (gy[tuple(sl)],)

    return make_op(out, (a,), backward)


# -------------------------------------------------------------- reductions


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    src = a.data.shape

    def backward(gy):
        g = np.asarray(gy)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return make_op(out, (a,), backward)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    elif isinstance(axis, tuple):
        n = int(np.prod([a.data.shape[i] for i in axis]))
    else:
        n = a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ------------------------------------------------------------- elementwise


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_op(out, (a,), lambda gy: (gy * out,))


def log(a):
    a = as_tensor(a)
    return make_op(np.log(a.data), (a,), lambda gy: (gy / a.data,))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_op(out, (a,), lambda gy: (gy * (1.0 - out * out),))


def sigmoid(a):
    a = as_tensor(a)
    out = 1.0 / (1.0 + np.exp(-a.data))
    return make_op(out, (a,), lambda gy: (gy * out * (1.0 - out),))


def gelu(a):
    a = as_tensor(a)
    out = _accel.gelu_fwd(a.data)
    return make_op(out, (a,), lambda gy: (_accel.gelu_bwd(a.data, gy),))


def dropout(a, p, rng, training):
    """Inverted dropout; the caller owns the rng so runs stay replayable."""
    if not training or p <= 0.0:
        return as_tensor(a)
    a = as_tensor(a)
    mask = (rng.random(a.data.shape) >= p).astype(a.data.dtype) / (1.0 - p)
    return mul(a, Tensor(mask))


# ------------------------------------------------- normalization, attention


def softmax(a):
    """Softmax over the last axis, any leading shape."""
    a = as_tensor(a)
    shp = a.data.shape
    flat = np.ascontiguousarray(a.data.reshape(-1, shp[-1]))
    y = _accel.softmax_fwd(flat)

    def backward(gy):
        g = _accel.softmax_bwd(y, np.ascontiguousarray(gy.reshape(-1, shp[-1])))
        return (g.reshape(shp),)

    return make_op(y.reshape(shp), (a,), backward)


def layer_norm(a, gamma, beta, eps=1e-5):
    a = as_tensor(a)
    shp = a.data.shape
    flat = np.ascontiguousarray(a.data.reshape(-1, shp[-1]))
    y, mu, rstd = _accel.layernorm_fwd(flat, gamma.data, beta.data, eps)

    def backward(gy):
        gy2 = np.ascontiguousarray(gy.reshape(-1, shp[-1]))
        dx, dgamma, dbeta = _accel.layernorm_bwd(flat, gamma.data, mu, rstd, gy2)
        return dx.reshape(shp), dgamma, dbeta

    return make_op(y.reshape(shp), (a, gamma, beta), backward)


def embedding(weight, idx):
    """Row gather from an embedding matrix; idx is an integer ndarray."""
    idx = np.asarray(idx)
    out = weight.data[idx]

    def backward(gy):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, idx, gy)
        return (gw,)

    return make_op(out, (weight,), backward)


# ------------------------------------------------------- structured kernels


def ctr_aggregate(a_ref, xw):
    """Joint aggregation with channel-specific topology.

    a_ref: (B, V, V, C) refined adjacency, indexed [b, source, target, c].
    xw:    (B, T, V, C) value-projected features.
    out[b,t,v,c] = sum_u a_ref[b,u,v,c] * xw[b,t,u,c]
    """
    a_ref, xw = as_tensor(a_ref), as_tensor(xw)
    out = np.einsum("buvc,btuc->btvc", a_ref.data, xw.data, optimize=True)

    def backward(gy):
        ga = np.einsum("btvc,btuc->buvc", gy, xw.data, optimize=True)
        gx = np.einsum("buvc,btvc->btuc", a_ref.data, gy, optimize=True)
        return ga, gx

    return make_op(out, (a_ref, xw), backward)


def maxpool3_time(a):
    """Max pooling over time, kernel 3, stride 1, same padding."""
    a = as_tensor(a)
    x = a.data
    t = x.shape[1]
    width = [(0, 0)] * x.ndim
    width[1] = (1, 1)
    xp = np.pad(x, width, constant_values=-np.inf)
    cands = np.stack([xp[:, k:k + t] for k in range(3)], axis=0)
    amax = cands.argmax(axis=0)
    out = np.take_along_axis(cands, amax[None], axis=0)[0]

    def backward(gy):
        gp = np.zeros_like(xp)
        for k in range(3):
            gp[:, k:k + t] += gy * (amax == k)
        return (gp[:, 1:1 + t],)

    return make_op(out, (a,), backward)


def time_conv(x, weight, bias, dilation=1):
    """1-D convolution over time shared across joints, same padding.

    x: (B, T, V, C_in), weight: (K, C_in, C_out), bias: (C_out,).
    """
    k = weight.data.shape[0]
    pad = dilation * (k - 1) // 2
    t = x.data.shape[1]
    xp = pad_time(x, pad, pad)
    taps = []
    for j in range(k):
        sl = slice_(xp, (slice(None), slice(j * dilation, j * dilation + t)))
        taps.append(matmul(sl, slice_(weight, j)))
    out = taps[0]
    for tap in taps[1:]:
        out = add(out, tap)
    return add(out, bias)


# ------------------------------------------------------------------ losses


def cross_entropy(logits, targets, pad_id=None):
    """Mean token-level negative log-likelihood from raw logits.

    logits: (N, V) Tensor; targets: (N,) integer ndarray. Positions whose
    target equals pad_id are excluded from the mean.
    """
    from ..errors import EmptyTarget

    targets = np.asarray(targets)
    x = logits.data
    n = x.shape[0]
    if pad_id is None:
        valid = np.ones(n, dtype=bool)
    else:
        valid = targets != pad_id
    count = int(valid.sum())
    if count == 0:
        raise EmptyTarget("all target positions are padding")
    shifted = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    nll = lse - shifted[rows, targets]
    loss = nll[valid].sum() / count

    def backward(gy):
        p = np.exp(shifted - lse[:, None])
        p[rows, targets] -= 1.0
        p[~valid] = 0.0
        return (p * (gy / count),)

    return make_op(np.asarray(loss, dtype=x.dtype), (logits,), backward)


def binary_cross_entropy(probs, labels):
    """Summed binary cross entropy over probabilities in (0, 1).

    Probabilities are clamped to [1e-7, 1 - 1e-7] before the logs; the
    result is a sum over positions, not a mean. Gradients vanish at
    clamped positions.
    """
    from ..errors import ShapeMismatch

    probs = as_tensor(probs)
    labels = np.asarray(labels, dtype=probs.data.dtype)
    if labels.shape != probs.data.shape:
        raise ShapeMismatch(
            f"labels {labels.shape} vs probabilities {probs.data.shape}")
    eps = 1e-7
    p = np.clip(probs.data, eps, 1.0 - eps)
    per = -(labels * np.log(p) + (1.0 - labels) * np.log1p(-p))
    loss = per.sum()
    inside = (probs.data > eps) & (probs.data < 1.0 - eps)

    def backward(gy):
        g = (p - labels) / (p * (1.0 - p))
        return (np.where(inside, g, 0.0) * gy,)

    return make_op(np.asarray(loss, dtype=probs.data.dtype), (probs,), backward)
