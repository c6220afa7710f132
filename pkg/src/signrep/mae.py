"""Masked autoencoder over sign segments.

Per-frame features come from a channel-refined graph convolution over
the skeleton plus multi-scale temporal convolution branches, pooled
over nodes. Training masks 25% of the frames, prepends a learnable
pooling token, encodes with a transformer, and reconstructs the full
segment from the pooled vector alone through a non-autoregressive
decoder driven by learnable queries. The reconstruction loss weights
body, face, and hands by their per-segment motion statistics.

The decoder's cross-attention memory is the pooled gloss vector (one
slot), not the full encoded sequence: downstream production expands
single predicted vectors through this frozen decoder, so pretraining
must force the pooled token to carry the whole segment.
"""

from __future__ import annotations

import json
import time

import numpy as np

from . import weighting
from .errors import (DivergedLoss, EmptyCorpus, NonFiniteActivation,
                     ShapeMismatch)
from .nn import functional as F
from .nn.checkpoint import register_model, save_checkpoint
from .nn.layers import (LearnedPositionalEmbedding, Linear, Module,
                        TransformerDecoder, TransformerEncoder, normal_init)
from .nn.optim import AdamW, LrSchedule, clip_global_norm, lr_at
from .nn.tensor import Parameter, Tensor, no_grad
from .pose import SignSegment, load_layout, pad_to_length

MAE_DEFAULTS = {
    "segment_len": 15,
    "mask_ratio": 0.25,
    "d": 128,
    "gc_channels": 16,
    "refine_dim": 8,
    "tcn_branches": ["k3d1", "k3d2", "p1", "pool"],
    "n_heads": 4,
    "d_ff": 256,
    "enc_layers": 2,
    "dec_layers": 2,
    "dropout": 0.1,
    "n_points": 73,
    "edges": None,  # defaults to the packaged 73-point skeleton
    "batch_size": 64,
    "steps": 2000,
    "peak_lr": 1e-4,
    "min_lr": 5e-5,
    "warmup_steps": 10000,
    "weight_decay": 1e-3,
    "beta1": 0.9,
    "beta2": 0.98,
    "clip_norm": 0.0,
    "apw_mode": "adaptive",
    "apw_fixed": [1.0, 1.17, 1.18],
    "apw_clamp_floor": 0.01,
    "checkpoint_interval": 0,
    "eval_segments_per_record": 2,
}


def adjacency_from_edges(n_points, edges):
    """Symmetrically normalized adjacency with self-loops."""
    a = np.eye(n_points, dtype=np.float64)
    for i, j in edges:
        a[i, j] = 1.0
        a[j, i] = 1.0
    deg = a.sum(axis=1)
    dinv = 1.0 / np.sqrt(deg)
    return (a * dinv[:, None] * dinv[None, :]).astype(np.float32)


def mask_plan(w, ratio, rng):
    """Distinct frame indices to mask; count is round-half-up of ratio*w."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"mask ratio must be in (0,1), got {ratio}")
    count = int(np.floor(ratio * w + 0.5))
    return np.sort(rng.choice(w, size=count, replace=False))


def sample_segment(seq, w, rng):
    """Uniform random window of w frames; short sequences are padded."""
    if seq.length < w:
        seq = pad_to_length(seq, w)
    offset = int(rng.integers(0, seq.length - w + 1))
    return SignSegment(seq.frames[offset:offset + w], source_id=seq.id,
                       offset=offset)


class GraphRefineConv(Module):
    """Graph convolution with channel-specific learned topology refinement.

    The shared normalized adjacency is offset per channel by a learned
    correlation of node features: pairwise differences of two linear
    projections (pooled over time), squashed with tanh, mapped to the
    output channels, and scaled by a scalar alpha initialized at zero so
    the first forward equals a plain shared-adjacency convolution.
    """

    def __init__(self, c_in, c_out, refine_dim, adjacency, rng):
        super().__init__()
        self.adjacency = adjacency.astype(np.float32)
        self.proj_a = Linear(c_in, refine_dim, rng)
        self.proj_b = Linear(c_in, refine_dim, rng)
        self.refine_out = Linear(refine_dim, c_out, rng, bias=False)
        self.value = Linear(c_in, c_out, rng)
        self.alpha = Parameter(np.zeros((), dtype=np.float32))

    def forward(self, x):
        """x: (B, T, V, C_in) -> (B, T, V, C_out)."""
        b, _, v, _ = x.shape
        pooled = F.mean(x, axis=1)                       # (B, V, C_in)
        pa = F.reshape(self.proj_a(pooled), (b, v, 1, -1))
        pb = F.reshape(self.proj_b(pooled), (b, 1, v, -1))
        refine = self.refine_out(F.tanh(F.sub(pa, pb)))  # (B, V, V, C_out)
        base = Tensor(self.adjacency[None, :, :, None])
        a_ref = F.add(F.mul(refine, self.alpha), base)
        return F.ctr_aggregate(a_ref, self.value(x))

    __call__ = forward


class MsTcn(Module):
    """Parallel temporal branches concatenated and projected back to d.

    Branch names: k3d1 / k3d2 (kernel-3 convolutions at dilations 1 and
    2), p1 (pointwise only), pool (kernel-3 temporal max pooling).
    """

    def __init__(self, c_in, d, branches, rng):
        super().__init__()
        if d % len(branches) != 0:
            raise ValueError(f"width {d} not divisible by {len(branches)} branches")
        cb = d // len(branches)
        self.branches = list(branches)
        self.points = [Linear(c_in, cb, rng) for _ in branches]
        self.conv_w = {}
        for i, name in enumerate(branches):
            if name in ("k3d1", "k3d2"):
                w = Parameter(normal_init(rng, (3, cb, cb), std=0.1))
                bias = Parameter(np.zeros(cb, dtype=np.float32))
                self.conv_w[i] = (w, bias)
        self.out = Linear(d, d, rng)

    def named_parameters(self, prefix=""):
        yield from super().named_parameters(prefix)
        for i, (w, bias) in sorted(self.conv_w.items()):
            yield (f"{prefix}conv.{i}.weight", w)
            yield (f"{prefix}conv.{i}.bias", bias)

    def forward(self, x):
        """x: (B, T, V, C_in) -> (B, T, V, d)."""
        outs = []
        for i, name in enumerate(self.branches):
            h = F.gelu(self.points[i](x))
            if name == "k3d1":
                w, bias = self.conv_w[i]
                h = F.time_conv(h, w, bias, dilation=1)
            elif name == "k3d2":
                w, bias = self.conv_w[i]
                h = F.time_conv(h, w, bias, dilation=2)
            elif name == "pool":
                h = F.maxpool3_time(h)
            elif name != "p1":
                raise ValueError(f"unknown temporal branch {name!r}")
            outs.append(h)
        return self.out(F.concat(outs, axis=3))

    __call__ = forward


class StExtractor(Module):
    """Graph stage, temporal stage, then mean pooling over nodes."""

    def __init__(self, d, gc_channels, refine_dim, branches, adjacency, rng):
        super().__init__()
        self.gc = GraphRefineConv(2, gc_channels, refine_dim, adjacency, rng)
        self.tcn = MsTcn(gc_channels, d, branches, rng)

    def forward(self, x):
        """x: (B, T, V, 2) -> (B, T, d)."""
        h = F.gelu(self.gc(x))
        h = self.tcn(h)
        return F.mean(h, axis=2)

    __call__ = forward


@register_model("signmae")
class SignMae(Module):
    def __init__(self, config, seed):
        super().__init__()
        cfg = dict(MAE_DEFAULTS)
        cfg.update(config or {})
        if cfg["edges"] is None:
            layout = load_layout()
            cfg["edges"] = [list(e) for e in layout.skeleton_edges]
        self.config = cfg
        self.seed = seed
        rng = np.random.default_rng([seed, 0])
        w = cfg["segment_len"]
        d = cfg["d"]
        self.n_points = cfg["n_points"]
        adjacency = adjacency_from_edges(self.n_points, cfg["edges"])
        self.extractor = StExtractor(d, cfg["gc_channels"], cfg["refine_dim"],
                                     cfg["tcn_branches"], adjacency, rng)
        self.pos_emb = LearnedPositionalEmbedding(w, d, rng)
        self.mask_emb = Parameter(normal_init(rng, (d,)))
        self.glor = Parameter(normal_init(rng, (d,)))
        self.encoder = TransformerEncoder(d, cfg["n_heads"], cfg["d_ff"],
                                          cfg["enc_layers"], rng,
                                          cfg["dropout"])
        self.queries = Parameter(normal_init(rng, (w, d)))
        self.decoder = TransformerDecoder(d, cfg["n_heads"], cfg["d_ff"],
                                          cfg["dec_layers"], rng,
                                          cfg["dropout"])
        self.out_proj = Linear(d, self.n_points * 2, rng)
        self.eval()

    @classmethod
    def from_config(cls, config, seed):
        return cls(config, seed)

    def encode(self, frames, mask_plans=None, rng=None):
        """Segment batch -> (pooled gloss vectors, encoded sequence).

        frames: (B, w, V, 2) array or Tensor; mask_plans: per-sample
        masked frame indices (None for no masking, the inference path).
        Returns (z: (B, d), encoded: (B, w+1, d)).
        """
        x = frames if isinstance(frames, Tensor) else Tensor(frames)
        b, w = x.shape[0], x.shape[1]
        if (w, x.shape[2], x.shape[3]) != (self.config["segment_len"],
                                           self.n_points, 2):
            raise ShapeMismatch(
                f"expected (B, {self.config['segment_len']}, {self.n_points},"
                f" 2), got {x.shape}")
        feats = self.extractor(x)
        pe = self.pos_emb(w)
        h = F.add(feats, pe)
        if mask_plans is not None:
            keep = np.ones((b, w, 1), dtype=h.data.dtype)
            for i, plan in enumerate(mask_plans):
                keep[i, np.asarray(plan, dtype=np.int64)] = 0.0
            masked_fill = F.add(self.mask_emb, pe)
            h = F.add(F.mul(h, Tensor(keep)),
                      F.mul(masked_fill, Tensor(1.0 - keep)))
        glor_row = F.add(F.reshape(self.glor, (1, 1, -1)),
                         Tensor(np.zeros((b, 1, h.data.shape[2]),
                                         dtype=h.data.dtype)))
        h = F.concat([glor_row, h], axis=1)
        enc = self.encoder(h, mask=None, rng=rng)
        if not np.isfinite(enc.data).all():
            raise NonFiniteActivation("encoder produced non-finite values")
        return enc[:, 0], enc

    def decode(self, z, rng=None):
        """Expand pooled vectors (B, d) or (B, k, d) to (B, w, V, 2)."""
        if z.ndim == 2:
            memory = F.reshape(z, (z.shape[0], 1, z.shape[1]))
        else:
            memory = z
        b = memory.shape[0]
        w = self.config["segment_len"]
        q = F.add(F.reshape(self.queries, (1, w, -1)),
                  Tensor(np.zeros((b, 1, 1), dtype=memory.data.dtype)))
        h = self.decoder(q, memory, self_mask=None, cross_mask=None, rng=rng)
        out = self.out_proj(h)
        return F.reshape(out, (b, w, self.n_points, 2))

    def reconstruct(self, frames, mask_plans=None, rng=None):
        z, _ = self.encode(frames, mask_plans=mask_plans, rng=rng)
        return self.decode(z, rng=rng)

    __call__ = reconstruct


def batch_weight_vectors(targets, layout, cfg):
    """Per-sample per-keypoint loss weights for a (B, w, V, 2) target batch."""
    rows = []
    for frames in targets:
        rows.append(weighting.segment_weight_vector(
            SignSegment(frames), layout, mode=cfg["apw_mode"],
            fixed=cfg["apw_fixed"], clamp_floor=cfg["apw_clamp_floor"]))
    return np.stack(rows, axis=0).astype(np.float32)


def reconstruction_loss(pred, targets, wv):
    """Batch-mean of the per-segment weighted squared error.

    pred: (B, w, V, 2) Tensor; targets: matching ndarray; wv: (B, V).
    """
    diff = F.sub(pred, Tensor(np.asarray(targets, dtype=pred.data.dtype)))
    sq = F.sum_(F.mul(diff, diff), axis=3)            # (B, w, V)
    weighted = F.mul(sq, Tensor(np.asarray(wv, dtype=pred.data.dtype)[:, None, :]))
    return F.mul(F.sum_(weighted), 1.0 / pred.shape[0])


def evaluate_reconstruction(model, records, layout, seed=1234):
    """Deterministic masked-reconstruction loss over fixed segment/mask draws.

    Used as the step-0 baseline and the post-training measurement; the
    fixed seed makes both calls comparable.
    """
    cfg = model.config
    rng = np.random.default_rng([seed, 77])
    w = cfg["segment_len"]
    frames, plans = [], []
    for rec in records:
        seq = rec.sequence() if hasattr(rec, "sequence") else rec
        for _ in range(cfg["eval_segments_per_record"]):
            frames.append(sample_segment(seq, w, rng).frames)
            plans.append(mask_plan(w, cfg["mask_ratio"], rng))
    targets = np.stack(frames, axis=0)
    model.eval()
    total = 0.0
    bs = max(int(cfg["batch_size"]), 1)
    with no_grad():
        for start in range(0, len(frames), bs):
            tb = targets[start:start + bs]
            pb = plans[start:start + bs]
            pred = model.reconstruct(tb, mask_plans=pb)
            wv = batch_weight_vectors(tb, layout, cfg)
            loss = reconstruction_loss(pred, tb, wv)
            total += float(loss.item()) * tb.shape[0]
    return total / len(frames)


def pretrain(records, config, layout=None, seed=0, log=None, ckpt_path=None):
    """Masked-reconstruction pretraining loop; returns the trained model.

    One random segment per sampled sequence per step; adaptive (or
    configured) part weights per segment; AdamW with the warmup/cosine
    schedule. Emits one JSON line per step through ``log``.
    """
    if not records:
        raise EmptyCorpus("pretraining needs a non-empty corpus")
    if layout is None:
        layout = load_layout()
    cfg = dict(MAE_DEFAULTS)
    cfg.update(config or {})
    model = SignMae(cfg, seed)
    cfg = model.config
    sequences = [rec.sequence() for rec in records]
    rng_data = np.random.default_rng([seed, 1])
    rng_drop = np.random.default_rng([seed, 2])
    schedule = LrSchedule(peak_lr=cfg["peak_lr"], min_lr=cfg["min_lr"],
                          warmup_steps=cfg["warmup_steps"],
                          total_steps=cfg["steps"])
    opt = AdamW(model.parameters(), lr=0.0, beta1=cfg["beta1"],
                beta2=cfg["beta2"], weight_decay=cfg["weight_decay"])
    w = cfg["segment_len"]
    model.train()
    for step in range(cfg["steps"]):
        t0 = time.perf_counter()
        picks = rng_data.integers(0, len(sequences), size=cfg["batch_size"])
        targets = np.stack([sample_segment(sequences[i], w, rng_data).frames
                            for i in picks], axis=0)
        plans = [mask_plan(w, cfg["mask_ratio"], rng_data)
                 for _ in range(targets.shape[0])]
        pred = model.reconstruct(targets, mask_plans=plans, rng=rng_drop)
        wv = batch_weight_vectors(targets, layout, cfg)
        loss = reconstruction_loss(pred, targets, wv)
        loss_val = float(loss.item())
        if not np.isfinite(loss_val):
            raise DivergedLoss(f"non-finite loss at step {step}")
        model.zero_grad()
        loss.backward()
        if cfg["clip_norm"] > 0:
            clip_global_norm(model.parameters(), cfg["clip_norm"])
        opt.lr = lr_at(step, schedule)
        opt.step()
        if log is not None:
            log(json.dumps({
                "step": step, "lr": opt.lr, "loss": loss_val,
                "wall_ms": round(1000 * (time.perf_counter() - t0), 3),
            }))
        interval = cfg["checkpoint_interval"]
        if ckpt_path and interval and (step + 1) % interval == 0 \
                and step + 1 < cfg["steps"]:
            model.eval()
            save_checkpoint(model, f"{ckpt_path}.step{step + 1}")
            model.train()
    model.eval()
    if ckpt_path:
        save_checkpoint(model, ckpt_path)
    return model
