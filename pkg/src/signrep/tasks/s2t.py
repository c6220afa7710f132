"""Sign-to-text translation over frozen pooled segment representations.

A transformer encoder reads the projected representation sequence Z and
an autoregressive decoder emits tokens under teacher forcing with plain
cross entropy. Inference is length-normalized beam search (beam 1 is
exactly greedy).
"""

from __future__ import annotations

import json
import time

import numpy as np

from ..errors import DivergedLoss, EmptyCorpus
from ..metrics import bleu_n, tokenize
from ..nn import functional as F
from ..nn.checkpoint import register_model, save_checkpoint
from ..nn.layers import (Embedding, LearnedPositionalEmbedding, Linear,
                         Module, TransformerDecoder, TransformerEncoder,
                         causal_mask)
from ..nn.optim import AdamW, LrSchedule, clip_global_norm, lr_at
from ..nn.tensor import Tensor, no_grad
from .vocab import Vocabulary
from .windows import WindowSpec, extract_reprs

S2T_DEFAULTS = {
    "repr_dim": 128,
    "d": 128,
    "n_heads": 4,
    "d_ff": 256,
    "enc_layers": 2,
    "dec_layers": 2,
    "dropout": 0.1,
    "vocab": None,          # token list, filled by training
    "max_src": 64,
    "max_tgt": 32,
    "window_w": 15,
    "window_s": 7,
    "batch_size": 64,
    "steps": 2000,
    "peak_lr": 1e-4,
    "min_lr": 5e-5,
    "warmup_steps": 10000,
    "weight_decay": 1e-3,
    "beta1": 0.9,
    "beta2": 0.98,
    "clip_norm": 0.0,
    "beam": 5,
    "eval_interval": 200,
    "patience": 5,
    "vocab_max": None,
}


@register_model("s2t")
class SignTranslator(Module):
    def __init__(self, config, seed):
        super().__init__()
        cfg = dict(S2T_DEFAULTS)
        cfg.update(config or {})
        if cfg["vocab"] is None:
            raise ValueError("s2t config needs a vocabulary token list")
        self.config = cfg
        self.seed = seed
        self.vocab = Vocabulary(cfg["vocab"])
        rng = np.random.default_rng([seed, 10])
        d = cfg["d"]
        self.in_proj = Linear(cfg["repr_dim"], d, rng)
        self.src_pos = LearnedPositionalEmbedding(cfg["max_src"], d, rng)
        self.encoder = TransformerEncoder(d, cfg["n_heads"], cfg["d_ff"],
                                          cfg["enc_layers"], rng, cfg["dropout"])
        self.tok_emb = Embedding(len(self.vocab), d, rng)
        self.tgt_pos = LearnedPositionalEmbedding(cfg["max_tgt"], d, rng)
        self.decoder = TransformerDecoder(d, cfg["n_heads"], cfg["d_ff"],
                                          cfg["dec_layers"], rng, cfg["dropout"])
        self.out = Linear(d, len(self.vocab), rng)
        self.eval()

    @classmethod
    def from_config(cls, config, seed):
        return cls(config, seed)

    def encode_src(self, z, src_mask=None, rng=None):
        """z: (B, N, repr_dim) array -> encoder memory (B, N, d)."""
        h = self.in_proj(Tensor(np.asarray(z, dtype=np.float32)))
        h = F.add(h, self.src_pos(h.shape[1]))
        return self.encoder(h, mask=src_mask, rng=rng)

    def logits(self, memory, tgt_ids, src_mask=None, rng=None):
        """Teacher-forced logits: tgt_ids (B, U) -> (B, U, vocab)."""
        u = tgt_ids.shape[1]
        h = F.add(self.tok_emb(tgt_ids), self.tgt_pos(u))
        h = self.decoder(h, memory, self_mask=causal_mask(u),
                         cross_mask=src_mask, rng=rng)
        return self.out(h)


def log_softmax_np(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def beam_search(step_fn, bos, eos, beam, max_len, length_norm=True):
    """Length-normalized beam search over a token-level step function.

    step_fn(prefix ids) -> log-probability vector for the next token.
    Returns (ids, score) for the best finished hypothesis (ids without
    bos/eos, score = logp / length); falls back to the best unfinished
    prefix at max_len. beam = 1 is greedy.
    """
    def score(logp, n):
        return logp / max(n, 1) if length_norm else logp

    live = [((bos,), 0.0)]
    finished = []
    for _ in range(max_len):
        candidates = []
        for prefix, logp in live:
            step_logp = step_fn(list(prefix))
            order = np.argsort(step_logp)[::-1][:beam]
            for tok in order:
                candidates.append((prefix + (int(tok),),
                                   logp + float(step_logp[tok])))
        candidates.sort(key=lambda c: score(c[1], len(c[0]) - 1), reverse=True)
        live = []
        for prefix, logp in candidates:
            if prefix[-1] == eos:
                finished.append((prefix, logp))
            else:
                live.append((prefix, logp))
            if len(live) >= beam:
                break
        if not live:
            break
    pool = finished if finished else [max(live, key=lambda c: score(c[1], len(c[0]) - 1))]
    best, logp = max(pool, key=lambda c: score(c[1], len(c[0]) - 1))
    ids = [t for t in best[1:] if t != eos]
    return ids, score(logp, len(best) - 1)


def translate(model, z, beam=None, max_len=None):
    """(token ids, score) for one representation sequence z: (N, repr_dim)."""
    model.eval()
    beam = model.config["beam"] if beam is None else beam
    max_len = model.config["max_tgt"] - 1 if max_len is None else max_len
    vocab = model.vocab
    with no_grad():
        memory = model.encode_src(z[None])

        def step_fn(prefix):
            ids = np.asarray([prefix], dtype=np.int64)
            out = model.logits(memory, ids)
            return log_softmax_np(out.data[0, -1].astype(np.float64))

        return beam_search(step_fn, vocab.bos_id, vocab.eos_id, beam, max_len)


def _pad_batch(z_list, tgt_list, pad_id):
    n_max = max(z.shape[0] for z in z_list)
    u_max = max(len(t) for t in tgt_list)
    b = len(z_list)
    zs = np.zeros((b, n_max, z_list[0].shape[1]), dtype=np.float32)
    src_mask = np.zeros((b, 1, 1, n_max), dtype=np.float32)
    tgt = np.full((b, u_max), pad_id, dtype=np.int64)
    for i, (z, t) in enumerate(zip(z_list, tgt_list)):
        zs[i, :z.shape[0]] = z
        src_mask[i, 0, 0, :z.shape[0]] = 1.0
        tgt[i, :len(t)] = t
    return zs, src_mask, tgt


def corpus_bleu4(model, z_list, texts):
    hyps = [model.vocab.decode(translate(model, z, beam=1)[0]) for z in z_list]
    return bleu_n([tokenize(h) for h in hyps],
                  [tokenize(t) for t in texts], max_n=4)


def s2t_train(train_records, valid_records, mae, config, seed=0, log=None,
              ckpt_path=None):
    """Train the translator on frozen representations; returns the model.

    Early stopping tracks validation BLEU-4 at eval_interval steps and
    restores the best parameters.
    """
    if not train_records:
        raise EmptyCorpus("s2t training needs a non-empty corpus")
    cfg = dict(S2T_DEFAULTS)
    cfg.update(config or {})
    if cfg["vocab"] is None:
        vocab = Vocabulary.build([r.text for r in train_records],
                                 max_size=cfg["vocab_max"])
        cfg["vocab"] = vocab.tokens
    model = SignTranslator(cfg, seed)
    cfg = model.config
    vocab = model.vocab
    spec = WindowSpec(cfg["window_w"], cfg["window_s"])

    def prep(records):
        zs, tgts, texts = [], [], []
        for rec in records:
            z, _ = extract_reprs(rec.sequence(), mae, spec)
            zs.append(z)
            tgts.append([vocab.bos_id] + vocab.encode(rec.text)
                        + [vocab.eos_id])
            texts.append(rec.text)
        return zs, tgts, texts

    z_train, tgt_train, _ = prep(train_records)
    z_valid, _, text_valid = prep(valid_records) if valid_records else ([], [], [])

    rng = np.random.default_rng([seed, 11])
    rng_drop = np.random.default_rng([seed, 12])
    schedule = LrSchedule(cfg["peak_lr"], cfg["min_lr"], cfg["warmup_steps"],
                          cfg["steps"])
    opt = AdamW(model.parameters(), lr=0.0, beta1=cfg["beta1"],
                beta2=cfg["beta2"], weight_decay=cfg["weight_decay"])
    best_bleu = -1.0
    best_state = None
    bad_evals = 0
    model.train()
    for step in range(cfg["steps"]):
        t0 = time.perf_counter()
        picks = rng.integers(0, len(z_train), size=min(cfg["batch_size"],
                                                       len(z_train)))
        zs, src_mask, tgt = _pad_batch([z_train[i] for i in picks],
                                       [tgt_train[i] for i in picks],
                                       vocab.pad_id)
        memory = model.encode_src(zs, src_mask, rng=rng_drop)
        logits = model.logits(memory, tgt[:, :-1], src_mask, rng=rng_drop)
        flat = F.reshape(logits, (-1, len(vocab)))
        loss = F.cross_entropy(flat, tgt[:, 1:].reshape(-1), vocab.pad_id)
        loss_val = float(loss.item())
        if not np.isfinite(loss_val):
            raise DivergedLoss(f"non-finite s2t loss at step {step}")
        model.zero_grad()
        loss.backward()
        if cfg["clip_norm"] > 0:
            clip_global_norm(model.parameters(), cfg["clip_norm"])
        opt.lr = lr_at(step, schedule)
        opt.step()
        record = {"step": step, "lr": opt.lr, "loss": loss_val,
                  "wall_ms": round(1000 * (time.perf_counter() - t0), 3)}
        if z_valid and (step + 1) % cfg["eval_interval"] == 0:
            bleu = corpus_bleu4(model, z_valid, text_valid)
            model.train()
            record["valid_bleu4"] = bleu
            if bleu > best_bleu:
                best_bleu = bleu
                best_state = [p.data.copy() for p in model.parameters()]
                bad_evals = 0
            else:
                bad_evals += 1
            if log is not None:
                log(json.dumps(record))
            if bad_evals >= cfg["patience"]:
                break
            continue
        if log is not None:
            log(json.dumps(record))
    if best_state is not None:
        for p, data in zip(model.parameters(), best_state):
            p.data = data
    model.eval()
    if ckpt_path:
        save_checkpoint(model, ckpt_path)
    return model
