import math

import numpy as np
import pytest

from signrep.nn.optim import AdamW, LrSchedule, clip_global_norm, lr_at
from signrep.nn.tensor import Parameter

SCHED = LrSchedule(peak_lr=1e-4, min_lr=5e-5, warmup_steps=100,
                   total_steps=1000)


class TestSchedule:
    def test_step_zero_is_zero(self):
        assert lr_at(0, SCHED) == 0.0

    def test_warmup_end_hits_peak(self):
        assert lr_at(100, SCHED) == pytest.approx(1e-4, abs=1e-12)

    def test_total_and_beyond_is_min(self):
        assert lr_at(1000, SCHED) == 5e-5
        assert lr_at(10_000, SCHED) == 5e-5

    def test_warmup_linear(self):
        assert lr_at(25, SCHED) == pytest.approx(0.25e-4)
        assert lr_at(50, SCHED) == pytest.approx(0.5e-4)

    def test_continuous_at_warmup_boundary(self):
        left = lr_at(99, SCHED)
        right = lr_at(100, SCHED)
        assert abs(right - left) < 2e-6  # one warmup increment

    def test_cosine_midpoint(self):
        mid = lr_at(550, SCHED)  # halfway through the decay span
        assert mid == pytest.approx(0.5 * (1e-4 + 5e-5), rel=1e-9)

    def test_monotone_nonincreasing_after_warmup(self):
        vals = [lr_at(s, SCHED) for s in range(100, 1100)]
        assert all(b <= a + 1e-18 for a, b in zip(vals, vals[1:]))

    def test_negative_step_rejected(self):
        with pytest.raises(ValueError):
            lr_at(-1, SCHED)

    def test_zero_warmup_starts_at_peak(self):
        sched = LrSchedule(1e-3, 1e-4, 0, 10)
        assert lr_at(0, sched) == pytest.approx(1e-3)


class TestAdamW:
    def _param(self, values):
        return Parameter(np.asarray(values, dtype=np.float64))

    def test_single_step_hand_oracle(self):
        p = self._param([1.0])
        p.grad = np.array([0.5])
        lr, b1, b2, eps, wd = 0.1, 0.9, 0.98, 1e-8, 0.01
        opt = AdamW([p], lr=lr, beta1=b1, beta2=b2, eps=eps, weight_decay=wd)
        opt.step()
        m = (1 - b1) * 0.5
        v = (1 - b2) * 0.25
        mhat = m / (1 - b1)
        vhat = v / (1 - b2)
        expect = 1.0 - lr * (mhat / (math.sqrt(vhat) + eps) + wd * 1.0)
        assert p.data[0] == pytest.approx(expect, abs=1e-12)

    def test_two_steps_hand_oracle(self):
        p = self._param([2.0])
        lr, b1, b2, eps, wd = 0.05, 0.9, 0.99, 1e-8, 0.0
        opt = AdamW([p], lr=lr, beta1=b1, beta2=b2, eps=eps, weight_decay=wd)
        theta, m, v = 2.0, 0.0, 0.0
        for t, g in enumerate([0.3, -0.7], start=1):
            p.grad = np.array([g])
            opt.step()
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            mhat = m / (1 - b1 ** t)
            vhat = v / (1 - b2 ** t)
            theta -= lr * mhat / (math.sqrt(vhat) + eps)
        assert p.data[0] == pytest.approx(theta, abs=1e-12)

    def test_lr_zero_leaves_param_but_updates_moments(self):
        p = self._param([3.0])
        p.grad = np.array([1.0])
        opt = AdamW([p], lr=0.0, weight_decay=0.0)
        opt.step()
        assert p.data[0] == 3.0
        assert opt._m[0][0] != 0.0
        assert opt._v[0][0] != 0.0

    def test_zero_grad_zero_decay_no_motion(self):
        p = self._param([1.5, -2.5])
        p.grad = np.zeros(2)
        opt = AdamW([p], lr=0.1, weight_decay=0.0)
        opt.step()
        np.testing.assert_array_equal(p.data, [1.5, -2.5])

    def test_decoupled_decay_applies_without_grad_signal(self):
        p = self._param([1.0])
        p.grad = np.zeros(1)
        opt = AdamW([p], lr=0.1, weight_decay=0.5)
        opt.step()
        assert p.data[0] == pytest.approx(1.0 - 0.1 * 0.5 * 1.0, abs=1e-12)

    def test_frozen_param_untouched(self):
        p = self._param([4.0])
        p.grad = np.array([1.0])
        p.trainable = False
        opt = AdamW([p], lr=0.1)
        opt.step()
        assert p.data[0] == 4.0
        assert opt._m[0][0] == 0.0

    def test_none_grad_skipped(self):
        a = self._param([1.0])
        b = self._param([2.0])
        b.grad = np.array([1.0])
        opt = AdamW([a, b], lr=0.1, weight_decay=0.0)
        opt.step()
        assert a.data[0] == 1.0
        assert b.data[0] != 2.0

    def test_optimizer_zero_grad(self):
        p = self._param([1.0])
        p.grad = np.array([1.0])
        opt = AdamW([p])
        opt.zero_grad()
        assert p.grad is None


class TestClipGlobalNorm:
    def test_below_threshold_untouched(self):
        p = Parameter(np.zeros(2))
        p.grad = np.array([0.3, 0.4])  # norm 0.5
        norm = clip_global_norm([p], 1.0)
        assert norm == pytest.approx(0.5)
        np.testing.assert_array_equal(p.grad, [0.3, 0.4])

    def test_scales_to_max_norm(self):
        p = Parameter(np.zeros(2))
        p.grad = np.array([3.0, 4.0])  # norm 5
        clip_global_norm([p], 1.0)
        assert np.linalg.norm(p.grad) == pytest.approx(1.0, rel=1e-12)
        np.testing.assert_allclose(p.grad, [0.6, 0.8])

    def test_joint_norm_across_params(self):
        a = Parameter(np.zeros(1))
        b = Parameter(np.zeros(1))
        a.grad = np.array([3.0])
        b.grad = np.array([4.0])
        norm = clip_global_norm([a, b], 2.5)
        assert norm == pytest.approx(5.0)
        assert a.grad[0] == pytest.approx(1.5)
        assert b.grad[0] == pytest.approx(2.0)
