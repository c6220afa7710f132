"""Isolated sign recognition over frozen segment representations.

A transformer encoder configured with the same dimensions as the
pretraining encoder reads the projected representation sequence with a
prepended classification token; a single linear layer maps the class
token's output to K logits.
"""

from __future__ import annotations

import json
import time

import numpy as np

from ..errors import DivergedLoss, EmptyCorpus
from ..nn import functional as F
from ..nn.checkpoint import register_model, save_checkpoint
from ..nn.layers import (LearnedPositionalEmbedding, Linear, Module,
                         TransformerEncoder, normal_init)
from ..nn.optim import AdamW, LrSchedule, clip_global_norm, lr_at
from ..nn.tensor import Parameter, Tensor, no_grad
from .windows import WindowSpec, extract_reprs

SLR_DEFAULTS = {
    "repr_dim": 128,
    "d": 128,
    "n_heads": 4,
    "d_ff": 256,
    "enc_layers": 2,
    "dropout": 0.1,
    "classes": None,        # label list, filled by training
    "max_src": 64,
    "window_w": 15,
    "window_s": 7,
    "batch_size": 64,
    "steps": 500,
    "peak_lr": 1e-4,
    "min_lr": 5e-5,
    "warmup_steps": 10000,
    "weight_decay": 1e-3,
    "beta1": 0.9,
    "beta2": 0.98,
    "clip_norm": 0.0,
}


@register_model("slr")
class SignClassifier(Module):
    def __init__(self, config, seed):
        super().__init__()
        cfg = dict(SLR_DEFAULTS)
        cfg.update(config or {})
        if not cfg["classes"]:
            raise ValueError("slr config needs a class label list")
        self.config = cfg
        self.seed = seed
        rng = np.random.default_rng([seed, 30])
        d = cfg["d"]
        self.in_proj = Linear(cfg["repr_dim"], d, rng)
        self.pos = LearnedPositionalEmbedding(cfg["max_src"] + 1, d, rng)
        self.cls_token = Parameter(normal_init(rng, (d,)), name="cls_token")
        self.encoder = TransformerEncoder(d, cfg["n_heads"], cfg["d_ff"],
                                          cfg["enc_layers"], rng, cfg["dropout"])
        self.head = Linear(d, len(cfg["classes"]), rng)
        self.eval()

    @classmethod
    def from_config(cls, config, seed):
        return cls(config, seed)

    def logits(self, z, src_mask=None, rng=None):
        """z (B, N, repr_dim), src_mask (B,1,1,N+1) incl. cls -> (B, K)."""
        b = z.shape[0]
        h = self.in_proj(Tensor(np.asarray(z, dtype=np.float32)))
        cls = F.add(F.reshape(self.cls_token, (1, 1, -1)),
                    Tensor(np.zeros((b, 1, 1), dtype=np.float32)))
        h = F.concat([cls, h], axis=1)
        h = F.add(h, self.pos(h.shape[1]))
        out = self.encoder(h, mask=src_mask, rng=rng)
        return self.head(F.slice_(out, (slice(None), 0)))


def record_label(rec):
    return rec.labels[0] if rec.labels else rec.text


def _pad_reprs(z_list):
    n_max = max(z.shape[0] for z in z_list)
    b = len(z_list)
    zs = np.zeros((b, n_max, z_list[0].shape[1]), dtype=np.float32)
    mask = np.zeros((b, 1, 1, n_max + 1), dtype=np.float32)
    mask[:, :, :, 0] = 1.0  # cls slot always attendable
    for i, z in enumerate(z_list):
        zs[i, :z.shape[0]] = z
        mask[i, 0, 0, 1:z.shape[0] + 1] = 1.0
    return zs, mask


def train_slr(records, mae, config, seed=0, log=None, ckpt_path=None):
    """Train the classifier on frozen representations; returns the model."""
    if not records:
        raise EmptyCorpus("slr training needs a non-empty corpus")
    cfg = dict(SLR_DEFAULTS)
    cfg.update(config or {})
    # encoder dims mirror the pretraining encoder by contract
    for key in ("d", "n_heads", "d_ff", "enc_layers"):
        cfg[key] = mae.config[key]
    cfg["repr_dim"] = mae.config["d"]
    if not cfg["classes"]:
        cfg["classes"] = sorted({record_label(r) for r in records})
    model = SignClassifier(cfg, seed)
    cfg = model.config
    class_ids = {c: i for i, c in enumerate(cfg["classes"])}
    spec = WindowSpec(cfg["window_w"], cfg["window_s"])

    z_all = [extract_reprs(r.sequence(), mae, spec)[0] for r in records]
    y_all = np.asarray([class_ids[record_label(r)] for r in records],
                       dtype=np.int64)

    rng = np.random.default_rng([seed, 31])
    rng_drop = np.random.default_rng([seed, 32])
    schedule = LrSchedule(cfg["peak_lr"], cfg["min_lr"], cfg["warmup_steps"],
                          cfg["steps"])
    opt = AdamW(model.parameters(), lr=0.0, beta1=cfg["beta1"],
                beta2=cfg["beta2"], weight_decay=cfg["weight_decay"])
    model.train()
    for step in range(cfg["steps"]):
        t0 = time.perf_counter()
        picks = rng.integers(0, len(z_all), size=min(cfg["batch_size"],
                                                     len(z_all)))
        zs, mask = _pad_reprs([z_all[i] for i in picks])
        logits = model.logits(zs, mask, rng=rng_drop)
        loss = F.cross_entropy(logits, y_all[picks], pad_id=-1)
        loss_val = float(loss.item())
        if not np.isfinite(loss_val):
            raise DivergedLoss(f"non-finite slr loss at step {step}")
        model.zero_grad()
        loss.backward()
        if cfg["clip_norm"] > 0:
            clip_global_norm(model.parameters(), cfg["clip_norm"])
        opt.lr = lr_at(step, schedule)
        opt.step()
        if log is not None:
            log(json.dumps({"step": step, "lr": opt.lr, "loss": loss_val,
                            "wall_ms": round(1000 * (time.perf_counter() - t0),
                                             3)}))
    model.eval()
    if ckpt_path:
        save_checkpoint(model, ckpt_path)
    return model


def slr_classify(seq, model, mae):
    """KeypointSequence -> probability vector over model.config['classes']."""
    model.eval()
    spec = WindowSpec(model.config["window_w"], model.config["window_s"])
    z, _ = extract_reprs(seq, mae, spec)
    with no_grad():
        logits = model.logits(z[None]).data[0].astype(np.float64)
    shifted = np.exp(logits - logits.max())
    return shifted / shifted.sum()
