"""AdamW with decoupled weight decay and the warmup/cosine schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import _accel


@dataclass
class LrSchedule:
    peak_lr: float = 1e-4
    min_lr: float = 5e-5
    warmup_steps: int = 10_000
    total_steps: int = 100_000


def lr_at(step, schedule):
    """Learning rate at an integer step.

    Linear ramp 0 -> peak over the warmup, cosine decay peak -> min over
    the remaining steps, constant min afterwards.
    """
    if step < 0:
        raise ValueError("step must be nonnegative")
    warm = schedule.warmup_steps
    if warm > 0 and step < warm:
        return schedule.peak_lr * step / warm
    if step >= schedule.total_steps:
        return schedule.min_lr
    span = max(schedule.total_steps - warm, 1)
    frac = (step - warm) / span
    return schedule.min_lr + 0.5 * (schedule.peak_lr - schedule.min_lr) * (
        1.0 + math.cos(math.pi * frac))


class AdamW:
    """Decoupled-weight-decay Adam over a fixed parameter list.

    Moment buffers match each parameter's dtype; non-trainable parameters
    and parameters without gradients are left untouched.
    """

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.98, eps=1e-8,
                 weight_decay=1e-3):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.step_count += 1
        for p, m, v in zip(self.params, self._m, self._v):
            if not getattr(p, "trainable", True) or p.grad is None:
                continue
            _accel.adamw_update(p.data, p.grad, m, v, self.step_count,
                                self.lr, self.beta1, self.beta2, self.eps,
                                self.weight_decay)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def clip_global_norm(params, max_norm):
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((np.asarray(p.grad, dtype=np.float64) ** 2).sum())
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm
