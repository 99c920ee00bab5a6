"""Forward behavior of the differentiable ops: hand-computable cases,
scalar oracles, and contract violations."""

import numpy as np
import pytest

from ikshana import Tensor
from ikshana.ops import (
    avgpool2x2, batchnorm2d, bilinear_resize, concat_channels, conv2d,
    relu, slice_channels, softmax_cross_entropy, tensor_sum,
)


def t(arr, **kw):
    return Tensor(np.asarray(arr, dtype=np.float64), **kw)


def rand(shape, seed=0):
    return Tensor(np.random.default_rng(seed).standard_normal(shape))


class TestConv2d:
    def test_ones_kernel_counts_coverage(self):
        x = t(np.ones((1, 1, 3, 3)))
        w = t(np.ones((1, 1, 3, 3)))
        y = conv2d(x, w, dilation=1, padding=1)
        expected = [[4, 6, 4], [6, 9, 6], [4, 6, 4]]
        assert np.array_equal(y.data[0, 0], expected)

    def test_center_spike_kernel_is_identity(self):
        x = rand((2, 3, 6, 7), seed=1)
        w = np.zeros((3, 3, 3, 3), dtype=np.float32)
        for c in range(3):
            w[c, c, 1, 1] = 1.0
        y = conv2d(x, Tensor(w), dilation=1, padding=1)
        assert np.array_equal(y.data, x.data)

    def test_dilated_identity_still_identity(self):
        # center tap of a dilated kernel still lands on the same pixel
        x = rand((1, 2, 8, 8), seed=2)
        w = np.zeros((2, 2, 3, 3), dtype=np.float32)
        for c in range(2):
            w[c, c, 1, 1] = 1.0
        y = conv2d(x, Tensor(w), dilation=3, padding=3)
        assert np.allclose(y.data, x.data, atol=1e-7)

    def test_output_shape_rule(self):
        x = rand((1, 3, 10, 12))
        w = rand((5, 3, 3, 3))
        assert conv2d(x, w, dilation=2, padding=0).shape == (1, 5, 6, 8)
        assert conv2d(x, w, dilation=2, padding=2).shape == (1, 5, 10, 12)

    def test_bias_added_per_channel(self):
        x = t(np.zeros((1, 2, 4, 4)))
        w = t(np.zeros((3, 2, 1, 1)))
        b = t([1.0, -2.0, 0.5])
        y = conv2d(x, w, bias=b)
        assert np.array_equal(y.data[0, :, 0, 0], [1.0, -2.0, 0.5])

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ValueError, match="channel"):
            conv2d(rand((1, 3, 4, 4)), rand((2, 4, 3, 3)), padding=1)

    def test_bad_kernel_size_rejected(self):
        with pytest.raises(ValueError):
            conv2d(rand((1, 3, 8, 8)), rand((2, 3, 5, 5)), padding=2)

    def test_collapsed_output_rejected(self):
        with pytest.raises(ValueError, match="output"):
            conv2d(rand((1, 3, 2, 2)), rand((2, 3, 3, 3)), dilation=1, padding=0)

    def test_non_finite_input_rejected(self):
        bad = Tensor(np.full((1, 1, 4, 4), np.nan))
        with pytest.raises(ValueError, match="NaN"):
            conv2d(bad, rand((1, 1, 3, 3)), padding=1)


class TestBatchNorm:
    def bn_args(self, c, dtype=np.float64):
        gamma = Tensor(np.ones(c, dtype=dtype))
        beta = Tensor(np.zeros(c, dtype=dtype))
        rm = np.zeros(c, dtype=dtype)
        rv = np.ones(c, dtype=dtype)
        return gamma, beta, rm, rv

    def test_constant_channel_maps_to_beta(self):
        x = t(np.full((2, 3, 4, 4), 7.0))
        gamma, beta, rm, rv = self.bn_args(3)
        beta = Tensor(np.array([0.5, -1.0, 2.0]))
        y = batchnorm2d(x, gamma, beta, rm, rv, training=True)
        for c, b in enumerate([0.5, -1.0, 2.0]):
            assert np.allclose(y.data[:, c], b, atol=1e-6)

    def test_train_normalizes_to_unit_stats(self):
        x = rand((4, 3, 8, 8), seed=3)
        gamma, beta, rm, rv = self.bn_args(3, np.float32)
        y = batchnorm2d(x, gamma, beta, rm, rv, training=True)
        mean = y.data.mean(axis=(0, 2, 3))
        var = y.data.var(axis=(0, 2, 3))
        assert np.allclose(mean, 0, atol=1e-5)
        assert np.allclose(var, 1, atol=1e-3)  # eps shifts variance slightly

    def test_running_stats_blend(self):
        x = rand((2, 2, 4, 4), seed=4)
        gamma, beta, rm, rv = self.bn_args(2, np.float32)
        rm[:] = 1.0
        rv[:] = 2.0
        batchnorm2d(x, gamma, beta, rm, rv, training=True, momentum=0.1)
        bm = x.data.mean(axis=(0, 2, 3))
        bv = x.data.var(axis=(0, 2, 3))
        assert np.allclose(rm, 0.9 * 1.0 + 0.1 * bm, atol=1e-6)
        assert np.allclose(rv, 0.9 * 2.0 + 0.1 * bv, atol=1e-6)

    def test_eval_matches_scalar_formula(self):
        rng = np.random.default_rng(5)
        x = Tensor(rng.standard_normal((2, 3, 5, 5)))
        gamma = Tensor(rng.standard_normal(3))
        beta = Tensor(rng.standard_normal(3))
        rm = rng.standard_normal(3)
        rv = rng.uniform(0.5, 2.0, 3)
        y = batchnorm2d(x, gamma, beta, rm.copy(), rv.copy(), training=False)
        eps = 1e-5
        want = np.empty_like(x.data)
        for c in range(3):
            want[:, c] = gamma.data[c] * (x.data[:, c] - rm[c]) / np.sqrt(rv[c] + eps) + beta.data[c]
        assert np.abs(y.data - want).max() <= 1e-6

    def test_eval_does_not_touch_running_stats(self):
        x = rand((1, 2, 4, 4))
        gamma, beta, rm, rv = self.bn_args(2, np.float32)
        batchnorm2d(x, gamma, beta, rm, rv, training=False)
        assert np.array_equal(rm, np.zeros(2)) and np.array_equal(rv, np.ones(2))

    def test_shape_mismatch_rejected(self):
        x = rand((1, 3, 4, 4))
        gamma, beta, rm, rv = self.bn_args(2, np.float32)
        with pytest.raises(ValueError):
            batchnorm2d(x, gamma, beta, rm, rv, training=True)

    def test_bad_eps_rejected(self):
        x = rand((1, 2, 4, 4))
        gamma, beta, rm, rv = self.bn_args(2, np.float32)
        with pytest.raises(ValueError):
            batchnorm2d(x, gamma, beta, rm, rv, training=True, eps=0.0)


class TestRelu:
    def test_all_negative(self):
        assert np.array_equal(relu(t(-np.ones((1, 1, 2, 2)))).data, np.zeros((1, 1, 2, 2)))

    def test_all_positive_identity(self):
        x = t(np.full((1, 1, 2, 2), 3.0))
        assert np.array_equal(relu(x).data, x.data)

    def test_mixed(self):
        x = t(np.array([-1.0, 0.0, 2.0]).reshape(1, 1, 1, 3))
        assert np.array_equal(relu(x).data.ravel(), [0, 0, 2])


class TestAvgPool:
    def test_constant_halves_resolution(self):
        y = avgpool2x2(t(np.full((1, 3, 8, 10), 2.5)))
        assert y.shape == (1, 3, 4, 5)
        assert np.allclose(y.data, 2.5)

    def test_window_means_match_manual(self):
        x = rand((1, 1, 4, 4), seed=6)
        y = avgpool2x2(x)
        for i in range(2):
            for j in range(2):
                want = x.data[0, 0, 2 * i:2 * i + 2, 2 * j:2 * j + 2].mean()
                assert np.isclose(y.data[0, 0, i, j], want)

    def test_odd_size_rejected(self):
        with pytest.raises(ValueError):
            avgpool2x2(rand((1, 1, 5, 4)))


class TestBilinearResize:
    def test_constant_stays_constant(self):
        y = bilinear_resize(t(np.full((1, 2, 3, 5), 4.0)), 7, 11)
        assert np.allclose(y.data, 4.0)

    def test_same_size_is_identity(self):
        x = rand((2, 3, 6, 9), seed=7)
        y = bilinear_resize(x, 6, 9)
        assert np.array_equal(y.data, x.data)

    def test_2x2_to_4x4_matches_scalar_oracle(self):
        x = t(np.array([[0.0, 1.0], [2.0, 3.0]]).reshape(1, 1, 2, 2))
        y = bilinear_resize(x, 4, 4)

        def oracle(i, j):
            sy = min(max((i + 0.5) * 0.5 - 0.5, 0.0), 1.0)
            sx = min(max((j + 0.5) * 0.5 - 0.5, 0.0), 1.0)
            y0, x0 = int(np.floor(sy)), int(np.floor(sx))
            y1, x1 = min(y0 + 1, 1), min(x0 + 1, 1)
            fy, fx = sy - y0, sx - x0
            g = x.data[0, 0]
            return (g[y0, x0] * (1 - fy) * (1 - fx) + g[y1, x0] * fy * (1 - fx)
                    + g[y0, x1] * (1 - fy) * fx + g[y1, x1] * fy * fx)

        want = np.array([[oracle(i, j) for j in range(4)] for i in range(4)])
        assert np.abs(y.data[0, 0] - want).max() <= 1e-6

    def test_downsample_shape(self):
        y = bilinear_resize(rand((1, 3, 8, 16)), 4, 8)
        assert y.shape == (1, 3, 4, 8)

    def test_bad_target_rejected(self):
        with pytest.raises(ValueError):
            bilinear_resize(rand((1, 1, 4, 4)), 0, 4)


class TestConcatSlice:
    def test_channel_sum(self):
        a, b = rand((1, 3, 4, 4), 8), rand((1, 32, 4, 4), 9)
        assert concat_channels([b, a]).shape[1] == 35

    def test_single_tensor_concat_identity(self):
        a = rand((1, 4, 3, 3))
        assert np.array_equal(concat_channels([a]).data, a.data)

    def test_concat_then_slice_inverts(self):
        a, b = rand((2, 5, 4, 4), 10), rand((2, 7, 4, 4), 11)
        cat = concat_channels([a, b])
        assert np.array_equal(slice_channels(cat, 0, 5).data, a.data)
        assert np.array_equal(slice_channels(cat, 5, 12).data, b.data)

    def test_full_slice_identity(self):
        a = rand((1, 6, 3, 3))
        assert np.array_equal(slice_channels(a, 0, 6).data, a.data)

    def test_mismatch_rejected(self):
        with pytest.raises(ValueError):
            concat_channels([rand((1, 2, 4, 4)), rand((1, 2, 4, 5))])

    def test_bad_range_rejected(self):
        x = rand((1, 4, 2, 2))
        for lo, hi in [(-1, 2), (2, 2), (0, 5)]:
            with pytest.raises(ValueError):
                slice_channels(x, lo, hi)


class TestSoftmaxCrossEntropy:
    def test_uniform_logits_give_log_c(self):
        logits = t(np.zeros((1, 20, 2, 2)))
        target = np.zeros((1, 2, 2), dtype=np.int64)
        loss = softmax_cross_entropy(logits, target)
        assert np.isclose(loss.item(), np.log(20.0), atol=1e-6)

    def test_saturated_correct_class_near_zero(self):
        logits = np.zeros((1, 5, 1, 1))
        logits[0, 2, 0, 0] = 1e4
        loss = softmax_cross_entropy(t(logits), np.full((1, 1, 1), 2, dtype=np.int64))
        assert loss.item() < 1e-4

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(12)
        logits = rng.standard_normal((2, 20, 2, 2))
        target = rng.integers(0, 20, (2, 2, 2))
        loss = softmax_cross_entropy(t(logits), target)
        total = 0.0
        for b in range(2):
            for i in range(2):
                for j in range(2):
                    z = logits[b, :, i, j]
                    p = np.exp(z - z.max())
                    p /= p.sum()
                    total += -np.log(p[target[b, i, j]])
        assert np.isclose(loss.item(), total / 8, atol=1e-6)

    def test_loss_nonnegative(self):
        rng = np.random.default_rng(13)
        for trial in range(5):
            logits = t(rng.standard_normal((1, 6, 3, 3)) * 10)
            target = rng.integers(0, 6, (1, 3, 3))
            assert softmax_cross_entropy(logits, target).item() >= 0

    def test_large_logits_stable(self):
        logits = t(np.full((1, 4, 2, 2), 1e4))
        loss = softmax_cross_entropy(logits, np.ones((1, 2, 2), dtype=np.int64))
        assert np.isfinite(loss.item())

    def test_out_of_range_target_rejected(self):
        logits = rand((1, 4, 2, 2))
        with pytest.raises(ValueError):
            softmax_cross_entropy(logits, np.full((1, 2, 2), 4, dtype=np.int64))

    def test_float_target_rejected(self):
        logits = rand((1, 4, 2, 2))
        with pytest.raises(ValueError):
            softmax_cross_entropy(logits, np.zeros((1, 2, 2)))


class TestSum:
    def test_scalar_value(self):
        x = rand((2, 3, 4, 4), 14)
        assert np.isclose(tensor_sum(x).item(), x.data.sum())
