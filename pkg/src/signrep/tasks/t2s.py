"""Non-autoregressive text-to-sign production.

A text encoder reads [head] + tokens; the head position's output feeds
a bottleneck length regulator that scores Q query slots, while the
remaining positions serve as cross-attention memory for a NAR decoder
over Q learnable queries. Valid slots (prefix of probabilities > 0.5)
are expanded to w-frame segments by the frozen reconstruction decoder.

Loss is the sum of a squared-L2 representation term over valid slots
and a sum-form BCE over all Q slot probabilities, averaged per batch
item. Slot targets come from non-overlapping stride-w windows of the
padded ground truth encoded by the frozen encoder.
"""

from __future__ import annotations

import json
import time

import numpy as np

from ..errors import DivergedLoss, EmptyCorpus, EmptyMask, ShapeMismatch, TooLong
from ..nn import functional as F
from ..nn.checkpoint import register_model, save_checkpoint
from ..nn.layers import (Dropout, Embedding, LayerNorm,
                         LearnedPositionalEmbedding, Linear, Module,
                         TransformerDecoder, TransformerEncoder, normal_init)
from ..nn.optim import AdamW, LrSchedule, clip_global_norm, lr_at
from ..nn.tensor import Parameter, Tensor, no_grad
from ..pose import KeypointSequence, pad_to_length
from .vocab import Vocabulary

T2S_DEFAULTS = {
    "repr_dim": 128,
    "d": 128,
    "n_heads": 4,
    "d_ff": 256,
    "enc_layers": 2,
    "dec_layers": 2,
    "dropout": 0.1,
    "vocab": None,
    "max_src": 64,
    "q_slots": 128,
    "window_w": 15,
    "threshold": 0.5,
    "batch_size": 64,
    "steps": 2000,
    "peak_lr": 1e-4,
    "min_lr": 5e-5,
    "warmup_steps": 10000,
    "weight_decay": 1e-3,
    "beta1": 0.9,
    "beta2": 0.98,
    "clip_norm": 0.0,
}


@register_model("t2s")
class TextToSign(Module):
    def __init__(self, config, seed):
        super().__init__()
        cfg = dict(T2S_DEFAULTS)
        cfg.update(config or {})
        if cfg["vocab"] is None:
            raise ValueError("t2s config needs a vocabulary token list")
        self.config = cfg
        self.seed = seed
        self.vocab = Vocabulary(cfg["vocab"])
        rng = np.random.default_rng([seed, 20])
        d = cfg["d"]
        self.tok_emb = Embedding(len(self.vocab), d, rng)
        self.pos = LearnedPositionalEmbedding(cfg["max_src"], d, rng)
        self.encoder = TransformerEncoder(d, cfg["n_heads"], cfg["d_ff"],
                                          cfg["enc_layers"], rng, cfg["dropout"])
        self.queries = Parameter(normal_init(rng, (cfg["q_slots"], d)),
                                 name="queries")
        self.decoder = TransformerDecoder(d, cfg["n_heads"], cfg["d_ff"],
                                          cfg["dec_layers"], rng, cfg["dropout"])
        self.out_proj = Linear(d, cfg["repr_dim"], rng)
        # length regulator: bottleneck + residual + LN, then slot logits
        self.lr_fc1 = Linear(d, d // 4, rng)
        self.lr_fc2 = Linear(d // 4, d, rng)
        self.lr_drop = Dropout(cfg["dropout"])
        self.lr_ln = LayerNorm(d)
        self.lr_head = Linear(d, cfg["q_slots"], rng)
        self.eval()

    @classmethod
    def from_config(cls, config, seed):
        return cls(config, seed)

    def text_encode(self, ids, src_mask=None, rng=None):
        """ids (B, S) with the head token first -> (head (B,d), seq (B,S-1,d))."""
        h = F.add(self.tok_emb(ids), self.pos(ids.shape[1]))
        out = self.encoder(h, mask=src_mask, rng=rng)
        head = F.slice_(out, (slice(None), 0))
        seq = F.slice_(out, (slice(None), slice(1, None)))
        return head, seq

    def length_regulate(self, head, rng=None):
        """Head vector (B, d) -> slot probabilities (B, Q)."""
        h = self.lr_fc2(self.lr_drop(F.gelu(self.lr_fc1(head)), rng))
        h = self.lr_ln(F.add(head, h))
        return F.sigmoid(self.lr_head(h))

    def predict_reprs(self, seq, cross_mask=None, rng=None):
        """Text memory (B, S-1, d) -> slot representations (B, Q, repr_dim)."""
        b = seq.shape[0]
        q = F.add(F.reshape(self.queries, (1,) + self.queries.shape),
                  Tensor(np.zeros((b, 1, 1), dtype=self.queries.data.dtype)))
        h = self.decoder(q, seq, self_mask=None, cross_mask=cross_mask, rng=rng)
        return self.out_proj(h)


def segment_targets(seq, mae, w, q_slots):
    """Frozen slot targets for one sequence: (N_gt, repr_dim), N_gt = ceil(T/w).

    The sequence is padded to a multiple of w by repeating the last
    frame, then cut into non-overlapping stride-w windows.
    """
    t = seq.frames.shape[0]
    n_gt = -(-t // w)
    if n_gt > q_slots:
        raise TooLong(f"{n_gt} ground-truth segments exceed {q_slots} slots")
    padded = pad_to_length(seq, n_gt * w) if n_gt * w > t else seq
    windows = padded.frames.reshape(n_gt, w, seq.frames.shape[1], 2)
    with no_grad():
        z, _ = mae.encode(windows)
    return z.data.astype(np.float32)


def t2s_loss(model, ids, enc_mask, z_tgt, valid, rng=None):
    """Batch loss -> (total Tensor, {"repr": float, "len": float}).

    ids (B,S) with head first; enc_mask (B,1,1,S); z_tgt (B,Q,repr);
    valid (B,Q) float 0/1. Total = (sum L_repr + sum L_len) / B.
    """
    b = ids.shape[0]
    cross_mask = enc_mask[:, :, :, 1:] if enc_mask is not None else None
    head, seq = model.text_encode(ids, enc_mask, rng)
    probs = model.length_regulate(head, rng)
    zhat = model.predict_reprs(seq, cross_mask, rng)
    diff = F.sub(zhat, Tensor(z_tgt))
    sq = F.sum_(F.mul(diff, diff), axis=2)
    repr_loss = F.sum_(F.mul(sq, Tensor(valid)))
    len_loss = F.binary_cross_entropy(probs, valid)
    total = F.mul(F.add(repr_loss, len_loss),
                  Tensor(np.float32(1.0 / b), requires_grad=False))
    return total, {"repr": float(repr_loss.item()) / b,
                   "len": float(len_loss.item()) / b}


def _pad_text_batch(id_lists, pad_id):
    s_max = max(len(t) for t in id_lists)
    b = len(id_lists)
    ids = np.full((b, s_max), pad_id, dtype=np.int64)
    mask = np.zeros((b, 1, 1, s_max), dtype=np.float32)
    for i, t in enumerate(id_lists):
        ids[i, :len(t)] = t
        mask[i, 0, 0, :len(t)] = 1.0
    return ids, mask


def t2s_train(records, mae, config, seed=0, log=None, ckpt_path=None):
    """Train text-to-sign on frozen slot targets; returns the model."""
    if not records:
        raise EmptyCorpus("t2s training needs a non-empty corpus")
    cfg = dict(T2S_DEFAULTS)
    cfg.update(config or {})
    if cfg["vocab"] is None:
        vocab = Vocabulary.build([r.text for r in records])
        cfg["vocab"] = vocab.tokens
    model = TextToSign(cfg, seed)
    cfg = model.config
    vocab = model.vocab
    w, q_slots = cfg["window_w"], cfg["q_slots"]

    id_lists, z_pad, labels = [], [], []
    for rec in records:
        id_lists.append([vocab.head_id] + vocab.encode(rec.text)
                        + [vocab.eos_id])
        z = segment_targets(rec.sequence(), mae, w, q_slots)
        padded = np.zeros((q_slots, z.shape[1]), dtype=np.float32)
        padded[:z.shape[0]] = z
        z_pad.append(padded)
        lab = np.zeros(q_slots, dtype=np.float32)
        lab[:z.shape[0]] = 1.0
        labels.append(lab)
    z_pad = np.stack(z_pad)
    labels = np.stack(labels)

    rng = np.random.default_rng([seed, 21])
    rng_drop = np.random.default_rng([seed, 22])
    schedule = LrSchedule(cfg["peak_lr"], cfg["min_lr"], cfg["warmup_steps"],
                          cfg["steps"])
    opt = AdamW(model.parameters(), lr=0.0, beta1=cfg["beta1"],
                beta2=cfg["beta2"], weight_decay=cfg["weight_decay"])
    model.train()
    for step in range(cfg["steps"]):
        t0 = time.perf_counter()
        picks = rng.integers(0, len(id_lists), size=min(cfg["batch_size"],
                                                        len(id_lists)))
        ids, enc_mask = _pad_text_batch([id_lists[i] for i in picks],
                                        vocab.pad_id)
        loss, parts = t2s_loss(model, ids, enc_mask, z_pad[picks],
                               labels[picks], rng=rng_drop)
        loss_val = float(loss.item())
        if not np.isfinite(loss_val):
            raise DivergedLoss(f"non-finite t2s loss at step {step}")
        model.zero_grad()
        loss.backward()
        if cfg["clip_norm"] > 0:
            clip_global_norm(model.parameters(), cfg["clip_norm"])
        opt.lr = lr_at(step, schedule)
        opt.step()
        if log is not None:
            log(json.dumps({"step": step, "lr": opt.lr, "loss": loss_val,
                            "repr_loss": parts["repr"],
                            "len_loss": parts["len"],
                            "wall_ms": round(1000 * (time.perf_counter() - t0),
                                             3)}))
    model.eval()
    if ckpt_path:
        save_checkpoint(model, ckpt_path)
    return model


def load_text_embeddings(path):
    """External text-embedding hook: .npz with head (d,) and seq (S, d)."""
    data = np.load(path)
    if "head" not in data or "seq" not in data:
        raise ShapeMismatch("embedding file needs 'head' and 'seq' arrays")
    head = np.asarray(data["head"], dtype=np.float32)
    seq = np.asarray(data["seq"], dtype=np.float32)
    if head.ndim != 1 or seq.ndim != 2 or seq.shape[1] != head.shape[0]:
        raise ShapeMismatch(f"bad embedding shapes {head.shape} / {seq.shape}")
    return head, seq


def t2s_generate(model, mae, text=None, embeddings=None):
    """Text (or precomputed embeddings) -> KeypointSequence of N_valid*w frames."""
    model.eval()
    w = model.config["window_w"]
    with no_grad():
        if embeddings is not None:
            head = Tensor(embeddings[0][None])
            seq = Tensor(embeddings[1][None])
        else:
            vocab = model.vocab
            ids = np.asarray([[vocab.head_id] + vocab.encode(text)
                              + [vocab.eos_id]], dtype=np.int64)
            head, seq = model.text_encode(ids)
        probs = model.length_regulate(head).data[0]
        binary = (probs > model.config["threshold"]).astype(np.float32)
        n_valid = int(np.argmin(binary)) if not binary.all() else binary.size
        if n_valid == 0:
            raise EmptyMask("no valid slot above threshold")
        zhat = model.predict_reprs(seq).data[0] * binary[:, None]
        segments = mae.decode(Tensor(zhat[:n_valid].astype(np.float32))).data
    frames = segments.reshape(n_valid * w, segments.shape[2], 2)
    return KeypointSequence(frames.astype(np.float32))
