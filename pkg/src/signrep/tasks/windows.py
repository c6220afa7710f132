"""Sliding-window segmentation and frozen-encoder representation extraction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn.tensor import no_grad
from ..pose import pad_to_length


@dataclass
class WindowSpec:
    w: int = 15
    s: int = 7

    def __post_init__(self):
        if not 1 <= self.s <= self.w:
            raise ValueError(f"stride must satisfy 1 <= s <= w, got {self}")


def window_count(t, spec):
    """Number of windows over t frames; short sequences pad to one window."""
    if t < 1:
        raise ValueError("sequence length must be positive")
    if t < spec.w:
        return 1
    return (t - spec.w) // spec.s + 1


def window_offsets(t, spec):
    return [i * spec.s for i in range(window_count(t, spec))]


def segment_frames(seq, spec):
    """Stack of (N, w, V, 2) windows, padding sequences shorter than w."""
    if seq.length < spec.w:
        seq = pad_to_length(seq, spec.w)
    offsets = window_offsets(seq.length, spec)
    return np.stack([seq.frames[o:o + spec.w] for o in offsets]), offsets


def extract_reprs(seq, encoder, spec, batch_size=64):
    """One pooled vector per window from a frozen encoder, temporal order.

    Returns (Z: (N, d) float32 array, window offsets).
    """
    windows, offsets = segment_frames(seq, spec)
    encoder.eval()
    outs = []
    with no_grad():
        for start in range(0, windows.shape[0], batch_size):
            z, _ = encoder.encode(windows[start:start + batch_size])
            outs.append(z.data)
    return np.concatenate(outs, axis=0), offsets
