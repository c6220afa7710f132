"""Adaptive pose weighting for the reconstruction loss.

Per-part spatio-temporal variances drive the weights
w^p = 1 - (sigma2_p + sigma2_b) / sum(sigma2); the body variance acts
as the baseline so low-motion parts (face, hands after wrist residual)
get emphasized. A fixed-weight baseline and uniform weights cover the
ablation modes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NegativeWeight, ShapeMismatch
from .pose import decompose_parts

CLAMP_FLOOR = 0.01
VAR_EPS = 1e-12
FIXED_DEFAULT = (1.0, 1.17, 1.18)


@dataclass
class PartVariances:
    body: float
    face: float
    hands: float

    def total(self):
        return self.body + self.face + self.hands


@dataclass
class PartWeights:
    body: float
    face: float
    hands: float
    mode: str = "adaptive"


def part_variances(seg, layout):
    """One variance scalar per part over a segment.

    Face uses centroid-normalized coordinates, hands use wrist
    residuals; per keypoint-coordinate population variance over frames,
    averaged within the part.
    """
    dec = decompose_parts(seg, layout)
    return PartVariances(
        body=float(np.var(dec.body.astype(np.float64), axis=0).mean()),
        face=float(np.var(dec.face_normalized.astype(np.float64), axis=0).mean()),
        hands=float(np.var(dec.hands_residual.astype(np.float64), axis=0).mean()),
    )


def adaptive_weights(v, clamp_floor=CLAMP_FLOOR):
    """Variance-driven part weights, uniform when all parts are static."""
    total = v.total()
    if total < VAR_EPS:
        return PartWeights(1.0, 1.0, 1.0, mode="uniform")
    vals = [1.0 - (p + v.body) / total for p in (v.body, v.face, v.hands)]
    vals = [max(w, clamp_floor) for w in vals]
    return PartWeights(*vals, mode="adaptive")


def fixed_weights(values=FIXED_DEFAULT):
    """Constant part weights; defaults follow dataset-level statistics."""
    body, face, hands = (float(x) for x in values)
    if body < 0 or face < 0 or hands < 0:
        raise NegativeWeight(f"fixed weights must be nonnegative: {values}")
    return PartWeights(body, face, hands, mode="fixed")


def uniform_weights():
    return PartWeights(1.0, 1.0, 1.0, mode="uniform")


def expand_weights(w, layout):
    """Length-73 per-keypoint vector with each part's scalar broadcast."""
    wv = np.empty(73, dtype=np.float64)
    wv[layout.body_indices] = w.body
    wv[layout.face_indices] = w.face
    wv[list(layout.left_hand_indices) + list(layout.right_hand_indices)] = w.hands
    return wv


def weighted_l2(gt, pred, wv):
    """Per-keypoint weighted squared error summed over the segment.

    L = sum_t sum_v wv[v] * sum_c (gt[t,v,c] - pred[t,v,c])^2
    """
    g = np.asarray(gt.frames if hasattr(gt, "frames") else gt, dtype=np.float64)
    p = np.asarray(pred.frames if hasattr(pred, "frames") else pred,
                   dtype=np.float64)
    wv = np.asarray(wv, dtype=np.float64)
    if g.shape != p.shape:
        raise ShapeMismatch(f"ground truth {g.shape} vs prediction {p.shape}")
    if wv.shape != (g.shape[1],):
        raise ShapeMismatch(f"weight vector {wv.shape} vs {g.shape[1]} keypoints")
    sq = ((g - p) ** 2).sum(axis=2)
    return float((sq * wv).sum())


def segment_weight_vector(seg, layout, mode="adaptive", fixed=FIXED_DEFAULT,
                          clamp_floor=CLAMP_FLOOR):
    """Weight vector for one training segment under the configured mode."""
    if mode == "adaptive":
        w = adaptive_weights(part_variances(seg, layout), clamp_floor)
    elif mode == "fixed":
        w = fixed_weights(fixed)
    elif mode == "uniform":
        w = uniform_weights()
    else:
        raise ValueError(f"unknown weighting mode {mode!r}")
    return expand_weights(w, layout)
