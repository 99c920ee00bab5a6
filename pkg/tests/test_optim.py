"""Optimizer and scheduler behavior against hand-iterated recurrences."""

import numpy as np
import pytest

from ikshana import Tensor
from ikshana.optim import ParamSet, ReduceLROnPlateau, SGDNesterov, he_normal


def make_param(value, name="p", ps=None):
    ps = ps or ParamSet()
    t = ps.add_param(name, Tensor(np.asarray(value, dtype=np.float32)))
    return ps, t


class TestParamSet:
    def test_duplicate_name_rejected(self):
        ps, _ = make_param([1.0])
        with pytest.raises(ValueError):
            ps.add_param("p", Tensor(np.zeros(1)))
        with pytest.raises(ValueError):
            ps.add_buffer("p", np.zeros(1))

    def test_insertion_order_preserved(self):
        ps = ParamSet()
        for name in ["w1", "b1", "gamma", "beta"]:
            ps.add_param(name, Tensor(np.zeros(2)))
        assert [n for n, _ in ps.params()] == ["w1", "b1", "gamma", "beta"]

    def test_zero_grad_clears(self):
        ps, t = make_param([1.0, 2.0])
        t.accumulate_grad(np.ones(2, dtype=np.float32))
        ps.zero_grad()
        assert t.grad is None

    def test_requires_grad_forced(self):
        ps = ParamSet()
        t = ps.add_param("w", Tensor(np.zeros(3)))
        assert t.requires_grad


class TestHeInit:
    def test_sample_variance_close(self):
        rng = np.random.default_rng(0)
        w = he_normal(rng, (32, 3, 3, 3), fan_out=32 * 9)
        assert w.shape == (32, 3, 3, 3)
        target = 2.0 / (32 * 9)
        assert abs(w.var() - target) / target < 0.20

    def test_reproducible(self):
        a = he_normal(np.random.default_rng(7), (4, 4), 16)
        b = he_normal(np.random.default_rng(7), (4, 4), 16)
        assert np.array_equal(a, b)


class TestSGDNesterov:
    def test_zero_grad_zero_velocity_no_move(self):
        ps, t = make_param([1.0, -1.0])
        opt = SGDNesterov(ps, lr=0.1, momentum=0.7)
        t.grad = np.zeros(2, dtype=np.float32)
        opt.step()
        assert np.array_equal(t.data, [1.0, -1.0])

    def test_zero_momentum_is_plain_sgd(self):
        ps, t = make_param([1.0])
        opt = SGDNesterov(ps, lr=0.1, momentum=0.0)
        t.grad = np.asarray([2.0], dtype=np.float32)
        opt.step()
        assert np.allclose(t.data, [1.0 - 0.1 * 2.0])

    def test_two_steps_match_hand_iteration(self):
        # v <- mu v + g ; p <- p - lr (g + mu v), with g = 1 throughout
        ps, t = make_param([0.0])
        opt = SGDNesterov(ps, lr=0.1, momentum=0.7)
        p, v = 0.0, 0.0
        for _ in range(2):
            t.grad = np.asarray([1.0], dtype=np.float32)
            opt.step()
            v = 0.7 * v + 1.0
            p = p - 0.1 * (1.0 + 0.7 * v)
        assert np.allclose(t.data, [p], atol=1e-7)

    def test_lr_zero_bitwise_noop(self):
        ps, t = make_param(np.random.default_rng(1).standard_normal(8))
        before = t.data.copy()
        opt = SGDNesterov(ps, lr=0.0)
        t.grad = np.ones(8, dtype=np.float32)
        opt.step()
        assert np.array_equal(t.data, before)

    def test_missing_grad_rejected(self):
        ps, t = make_param([1.0])
        opt = SGDNesterov(ps, lr=0.1)
        with pytest.raises(RuntimeError, match="no gradient"):
            opt.step()


class TestReduceLROnPlateau:
    def scheduler(self, lr=1e-6):
        ps, t = make_param([0.0])
        return ReduceLROnPlateau(SGDNesterov(ps, lr=lr))

    def test_improving_sequence_keeps_lr(self):
        sched = self.scheduler()
        for loss in np.linspace(1.0, 0.5, 50):
            sched.step(float(loss))
        assert sched.lr == 1e-6

    def test_cut_after_patience_exceeded(self):
        sched = self.scheduler()
        sched.step(1.0)  # establishes the best
        for _ in range(20):
            sched.step(1.0)
        assert sched.lr == 1e-6  # patience not yet exceeded
        sched.step(1.0)  # 21st bad epoch
        assert sched.lr == 5e-7

    def test_two_cuts_after_43_flat_epochs(self):
        sched = self.scheduler()
        sched.step(1.0)
        for _ in range(43):
            sched.step(1.0)
        assert sched.lr == 2.5e-7

    def test_tiny_improvement_below_threshold_counts_bad(self):
        sched = self.scheduler()
        sched.step(1.0)
        for _ in range(21):
            sched.step(1.0 - 1e-6)  # within the 1e-4 relative threshold
        assert sched.lr == 5e-7

    def test_counter_bounded_by_patience(self):
        sched = self.scheduler()
        for _ in range(100):
            sched.step(1.0)
            assert sched.bad_epochs <= sched.patience

    def test_lr_non_increasing(self):
        rng = np.random.default_rng(3)
        sched = self.scheduler()
        prev = sched.lr
        for _ in range(200):
            sched.step(float(rng.uniform(0.5, 1.5)))
            assert sched.lr <= prev
            prev = sched.lr

    def test_state_roundtrip(self):
        sched = self.scheduler()
        for loss in [1.0, 0.9, 0.95, 0.95, 0.95]:
            sched.step(loss)
        state = sched.state_dict()
        other = self.scheduler()
        other.load_state_dict(state)
        assert other.state_dict() == state
        # identical future behavior
        for loss in [0.95] * 30:
            sched.step(loss)
            other.step(loss)
        assert sched.lr == other.lr and sched.bad_epochs == other.bad_epochs
