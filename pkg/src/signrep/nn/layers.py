"""Neural network modules built on the Tensor engine.

Initialization follows fixed conventions so runs reproduce exactly:
Xavier-uniform projection weights, zero biases, N(0, 0.02) for
embeddings and learnable tokens. Every constructor takes the rng that
draws its weights.
"""

from __future__ import annotations

import math

import numpy as np

from . import functional as F
from .tensor import Parameter, Tensor


class Module:
    """Minimal container: children discovered by attribute walk."""

    def __init__(self):
        self.training = True

    def _children(self):
        for key, val in vars(self).items():
            if isinstance(val, Module):
                yield key, val
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix=""):
        for key, val in vars(self).items():
            if isinstance(val, Parameter):
                yield (prefix + key, val)
        for key, child in self._children():
            yield from child.named_parameters(prefix + key + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def train(self, mode=True):
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


def xavier_uniform(rng, d_in, d_out):
    limit = math.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-limit, limit, size=(d_in, d_out)).astype(np.float32)


def normal_init(rng, shape, std=0.02):
    return (rng.standard_normal(shape) * std).astype(np.float32)


class Linear(Module):
    def __init__(self, d_in, d_out, rng, bias=True):
        super().__init__()
        self.weight = Parameter(xavier_uniform(rng, d_in, d_out))
        self.bias = Parameter(np.zeros(d_out, dtype=np.float32)) if bias else None

    def forward(self, x):
        y = F.matmul(x, self.weight)
        if self.bias is not None:
            y = F.add(y, self.bias)
        return y

    __call__ = forward


class Embedding(Module):
    def __init__(self, num, d, rng):
        super().__init__()
        self.weight = Parameter(normal_init(rng, (num, d)))

    def forward(self, idx):
        return F.embedding(self.weight, idx)

    __call__ = forward


class LearnedPositionalEmbedding(Module):
    """Per-position vectors added to a (B, T, d) sequence."""

    def __init__(self, max_len, d, rng):
        super().__init__()
        self.weight = Parameter(normal_init(rng, (max_len, d)))
        self.max_len = max_len

    def forward(self, t):
        """Return the first t position vectors as a (t, d) tensor."""
        if t > self.max_len:
            from ..errors import TooLong
            raise TooLong(f"sequence length {t} exceeds table size {self.max_len}")
        return F.slice_(self.weight, slice(0, t))

    __call__ = forward


class LayerNorm(Module):
    def __init__(self, d, eps=1e-5):
        super().__init__()
        self.gamma = Parameter(np.ones(d, dtype=np.float32))
        self.beta = Parameter(np.zeros(d, dtype=np.float32))
        self.eps = eps

    def forward(self, x):
        return F.layer_norm(x, self.gamma, self.beta, self.eps)

    __call__ = forward


class Dropout(Module):
    def __init__(self, p):
        super().__init__()
        self.p = p

    def forward(self, x, rng=None):
        active = self.training and rng is not None
        return F.dropout(x, self.p, rng, active)

    __call__ = forward


class MultiHeadAttention(Module):
    """Scaled dot-product attention, self or cross depending on inputs.

    Masks are numpy arrays broadcastable to (B, heads, Tq, Tk) with 1 for
    allowed links and 0 for blocked ones; blocked scores get -1e9 before
    the softmax so their weights collapse to zero.
    """

    def __init__(self, d, n_heads, rng, dropout=0.0):
        super().__init__()
        if d % n_heads != 0:
            raise ValueError(f"width {d} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.d_head = d // n_heads
        self.wq = Linear(d, d, rng)
        self.wk = Linear(d, d, rng)
        self.wv = Linear(d, d, rng)
        self.wo = Linear(d, d, rng)
        self.drop = Dropout(dropout)

    def _split(self, x, b, t):
        x = F.reshape(x, (b, t, self.n_heads, self.d_head))
        return F.transpose(x, (0, 2, 1, 3))

    def forward(self, query, key, value, mask=None, rng=None):
        b, tq = query.shape[0], query.shape[1]
        tk = key.shape[1]
        q = self._split(self.wq(query), b, tq)
        k = self._split(self.wk(key), b, tk)
        v = self._split(self.wv(value), b, tk)
        scores = F.matmul(q, F.transpose(k, (0, 1, 3, 2)))
        scores = F.mul(scores, 1.0 / math.sqrt(self.d_head))
        if mask is not None:
            bias = (1.0 - np.asarray(mask, dtype=np.float32)) * -1e9
            scores = F.add(scores, Tensor(bias))
        attn = F.softmax(scores)
        attn = self.drop(attn, rng)
        ctx = F.matmul(attn, v)
        ctx = F.transpose(ctx, (0, 2, 1, 3))
        ctx = F.reshape(ctx, (b, tq, self.n_heads * self.d_head))
        return self.wo(ctx)

    __call__ = forward


class FeedForward(Module):
    def __init__(self, d, d_ff, rng, dropout=0.0):
        super().__init__()
        self.inner = Linear(d, d_ff, rng)
        self.outer = Linear(d_ff, d, rng)
        self.drop = Dropout(dropout)

    def forward(self, x, rng=None):
        return self.outer(self.drop(F.gelu(self.inner(x)), rng))

    __call__ = forward


class EncoderBlock(Module):
    """Pre-norm transformer block: attention then feed-forward."""

    def __init__(self, d, n_heads, d_ff, rng, dropout=0.0):
        super().__init__()
        self.ln1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, n_heads, rng, dropout)
        self.ln2 = LayerNorm(d)
        self.ff = FeedForward(d, d_ff, rng, dropout)
        self.drop = Dropout(dropout)

    def forward(self, x, mask=None, rng=None):
        h = self.ln1(x)
        x = F.add(x, self.drop(self.attn(h, h, h, mask, rng), rng))
        x = F.add(x, self.drop(self.ff(self.ln2(x), rng), rng))
        return x

    __call__ = forward


class DecoderBlock(Module):
    """Pre-norm block with self attention plus cross attention to memory."""

    def __init__(self, d, n_heads, d_ff, rng, dropout=0.0):
        super().__init__()
        self.ln1 = LayerNorm(d)
        self.self_attn = MultiHeadAttention(d, n_heads, rng, dropout)
        self.ln2 = LayerNorm(d)
        self.cross_attn = MultiHeadAttention(d, n_heads, rng, dropout)
        self.ln3 = LayerNorm(d)
        self.ff = FeedForward(d, d_ff, rng, dropout)
        self.drop = Dropout(dropout)

    def forward(self, x, memory, self_mask=None, cross_mask=None, rng=None):
        h = self.ln1(x)
        x = F.add(x, self.drop(self.self_attn(h, h, h, self_mask, rng), rng))
        h = self.ln2(x)
        x = F.add(x, self.drop(self.cross_attn(h, memory, memory, cross_mask, rng), rng))
        x = F.add(x, self.drop(self.ff(self.ln3(x), rng), rng))
        return x

    __call__ = forward


class TransformerEncoder(Module):
    def __init__(self, d, n_heads, d_ff, n_layers, rng, dropout=0.0):
        super().__init__()
        self.blocks = [EncoderBlock(d, n_heads, d_ff, rng, dropout)
                       for _ in range(n_layers)]
        self.ln_final = LayerNorm(d)

    def forward(self, x, mask=None, rng=None):
        for block in self.blocks:
            x = block(x, mask, rng)
        return self.ln_final(x)

    __call__ = forward


class TransformerDecoder(Module):
    def __init__(self, d, n_heads, d_ff, n_layers, rng, dropout=0.0):
        super().__init__()
        self.blocks = [DecoderBlock(d, n_heads, d_ff, rng, dropout)
                       for _ in range(n_layers)]
        self.ln_final = LayerNorm(d)

    def forward(self, x, memory, self_mask=None, cross_mask=None, rng=None):
        for block in self.blocks:
            x = block(x, memory, self_mask, cross_mask, rng)
        return self.ln_final(x)

    __call__ = forward


def causal_mask(t):
    """Lower-triangular (1, 1, t, t) mask for autoregressive self attention."""
    return np.tril(np.ones((t, t), dtype=np.float32))[None, None]
