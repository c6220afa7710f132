"""Text and pose metrics: corpus BLEU-n, ROUGE-L, and MPJPE.

BLEU is corpus-level with additive smoothing 1e-9 on zero numerators
and the standard brevity penalty. ROUGE-L is per-pair LCS F1 averaged
over the corpus. MPJPE aligns sequences by truncating both to the
shorter length.
"""

from __future__ import annotations

import warnings
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyOverlap, LengthMismatch

BLEU_EPS = 1e-9


def tokenize(text):
    """Whitespace tokenization on lowercased text."""
    return text.lower().split()


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_n(hypotheses, references, max_n=4):
    """Corpus-level BLEU with brevity penalty.

    hypotheses/references are parallel lists of token lists. Geometric
    mean of modified n-gram precisions for n = 1..max_n, each numerator
    smoothed by 1e-9 when zero, times exp(min(0, 1 - ref_len/hyp_len)).
    """
    if len(hypotheses) != len(references):
        raise LengthMismatch(
            f"{len(hypotheses)} hypotheses vs {len(references)} references")
    matched = np.zeros(max_n, dtype=np.float64)
    total = np.zeros(max_n, dtype=np.float64)
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            hgrams = _ngrams(hyp, n)
            rgrams = _ngrams(ref, n)
            matched[n - 1] += sum(min(c, rgrams[g]) for g, c in hgrams.items())
            total[n - 1] += max(sum(hgrams.values()), 0)
    if hyp_len == 0:
        return 0.0
    log_p = 0.0
    for n in range(max_n):
        num = matched[n] if matched[n] > 0 else BLEU_EPS
        denom = max(total[n], 1.0)
        log_p += np.log(num / denom)
    bp = min(0.0, 1.0 - ref_len / hyp_len)
    return float(np.exp(bp + log_p / max_n))


def _lcs_len(a, b):
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(hypothesis, reference):
    """LCS-based F1 for one pair of token lists."""
    if not hypothesis or not reference:
        warnings.warn("empty sequence in ROUGE-L, scoring 0")
        return 0.0
    lcs = _lcs_len(hypothesis, reference)
    if lcs == 0:
        return 0.0
    p = lcs / len(hypothesis)
    r = lcs / len(reference)
    return 2.0 * p * r / (p + r)


def rouge_l_corpus(hypotheses, references):
    if len(hypotheses) != len(references):
        raise LengthMismatch(
            f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not hypotheses:
        return 0.0
    return float(np.mean([rouge_l(h, r) for h, r in zip(hypotheses, references)]))


def mpjpe(pred, gt):
    """Mean per-joint position error over the overlapping frames."""
    p = np.asarray(pred.frames if hasattr(pred, "frames") else pred,
                   dtype=np.float64)
    g = np.asarray(gt.frames if hasattr(gt, "frames") else gt,
                   dtype=np.float64)
    t = min(p.shape[0], g.shape[0])
    if t == 0:
        raise EmptyOverlap("no overlapping frames to compare")
    return float(np.linalg.norm(p[:t] - g[:t], axis=2).mean())


@dataclass
class MetricReport:
    bleu_1: float = 0.0
    bleu_2: float = 0.0
    bleu_3: float = 0.0
    bleu_4: float = 0.0
    rouge_l: float = 0.0
    mpjpe: float = float("nan")
    sample_count: int = 0
    config: dict = field(default_factory=lambda: {
        "bleu_smoothing": BLEU_EPS,
        "tokenizer": "whitespace-lower",
        "mpjpe_alignment": "truncate-to-min",
        "back_translation": "self",
    })

    def as_dict(self):
        out = {k: getattr(self, k) for k in
               ("bleu_1", "bleu_2", "bleu_3", "bleu_4", "rouge_l",
                "mpjpe", "sample_count")}
        out["config"] = dict(self.config)
        return out


def score_texts(hypotheses, references, mpjpe_value=float("nan")):
    """MetricReport over parallel raw-text lists."""
    hyp_tok = [tokenize(h) for h in hypotheses]
    ref_tok = [tokenize(r) for r in references]
    scores = {f"bleu_{n}": bleu_n(hyp_tok, ref_tok, max_n=n)
              for n in range(1, 5)}
    return MetricReport(
        rouge_l=rouge_l_corpus(hyp_tok, ref_tok),
        mpjpe=mpjpe_value,
        sample_count=len(hypotheses),
        **scores,
    )
