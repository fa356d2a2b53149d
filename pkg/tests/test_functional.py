"""Tests for cst_seld.functional module."""

import numpy as np
import pytest

from cst_seld import functional as F
from cst_seld.errors import ConfigurationError
from cst_seld.tensor import Tensor


class TestActivations:

    def test_softmax_rows_sum_to_one(self, float64, rng):
        """Softmax output is nonnegative and normalised, even for large logits."""
        x = Tensor(rng.normal(size=(4, 7)) * 300.0)
        s = F.softmax_last(x).data

        assert np.all(s >= 0)
        np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)

    def test_softmax_gradient(self, gradcheck, rng):
        x = rng.normal(size=(3, 5))
        w = rng.normal(size=(3, 5))

        gradcheck(lambda a: (F.softmax_last(a) * Tensor(w)).sum(), x)

    def test_gelu_values_and_gradient(self, gradcheck, rng):
        """Exact GeLU: 0 at 0, x * Phi(x) elsewhere."""
        out = F.gelu(Tensor(np.array([0.0, 1.0, -1.0]))).data

        np.testing.assert_allclose(out, [0.0, 0.8413447460685429, -0.15865525393145707])
        gradcheck(lambda a: F.gelu(a).sum(), rng.normal(size=(6,)))

    def test_dropout_identity_in_eval(self, float64):
        """Evaluation mode and zero rate are the identity."""
        x = Tensor(np.ones((2, 3)))

        assert F.dropout(x, 0.5, None, train=False) is x
        assert F.dropout(x, 0.0, None, train=True) is x

    def test_dropout_needs_generator(self, float64):
        with pytest.raises(ConfigurationError):
            F.dropout(Tensor(np.ones(3)), 0.5, None, train=True)

    def test_dropout_is_inverted(self, float64):
        """Kept activations are scaled by 1 / (1 - rate)."""
        x = Tensor(np.ones(10_000))
        out = F.dropout(x, 0.25, np.random.default_rng(0), train=True).data

        assert set(np.unique(out)) <= {0.0, 1.0 / 0.75}
        assert abs(out.mean() - 1.0) < 0.05


class TestNormalisation:

    def test_layer_norm_statistics(self, float64, rng):
        """Unit scale and zero offset give zero mean and unit variance."""
        x = Tensor(rng.normal(3.0, 2.0, size=(2, 8, 5)))
        out = F.layer_norm(x, Tensor(np.ones(8)), Tensor(np.zeros(8)), axis=1).data

        np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.var(axis=1), 1.0, atol=1e-4)

    def test_layer_norm_gradient(self, gradcheck, rng):
        x = rng.normal(size=(2, 4, 3))
        gamma = rng.normal(size=(4,))
        beta = rng.normal(size=(4,))
        w = rng.normal(size=(2, 4, 3))

        gradcheck(lambda a, g, b: (F.layer_norm(a, g, b, axis=1) * Tensor(w)).sum(), x, gamma, beta)

    def test_batch_norm_updates_running_statistics(self, float64, rng):
        """Running statistics blend with momentum 0.9 in train mode only."""
        x = Tensor(rng.normal(2.0, 3.0, size=(4, 3, 5, 6)))
        state = F.BatchNormState.fresh(3, np.float64)
        gamma, beta = Tensor(np.ones(3)), Tensor(np.zeros(3))

        F.batch_norm(x, gamma, beta, state, train=True)
        batch_mean = x.data.mean(axis=(0, 2, 3))
        np.testing.assert_allclose(state.running_mean, 0.1 * batch_mean)

        before = state.running_mean.copy()
        F.batch_norm(x, gamma, beta, state, train=False)
        np.testing.assert_array_equal(state.running_mean, before)

    def test_batch_norm_eval_uses_running_statistics(self, float64):
        """Evaluation mode normalises with the stored statistics."""
        state = F.BatchNormState(np.array([1.0]), np.array([4.0]))
        x = Tensor(np.full((1, 1, 2, 2), 5.0))
        out = F.batch_norm(x, Tensor(np.ones(1)), Tensor(np.zeros(1)), state, train=False)

        np.testing.assert_allclose(out.data, 2.0, atol=1e-5)

    def test_batch_norm_gradient(self, gradcheck, rng):
        x = rng.normal(size=(3, 2, 2, 3))
        gamma = rng.normal(size=(2,))
        beta = rng.normal(size=(2,))
        w = rng.normal(size=(3, 2, 2, 3))

        def build(a, g, b):
            state = F.BatchNormState.fresh(2, np.float64)
            return (F.batch_norm(a, g, b, state, train=True) * Tensor(w)).sum()

        gradcheck(build, x, gamma, beta)


class TestConvolutions:

    def test_conv2d_identity_kernel(self, float64, rng):
        """A centred delta kernel copies the input."""
        x = rng.normal(size=(2, 1, 4, 5))
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 1, 1] = 1.0

        np.testing.assert_allclose(F.conv2d(Tensor(x), Tensor(w)).data, x)

    def test_conv2d_gradient(self, gradcheck, rng):
        x = rng.normal(size=(2, 2, 4, 3))
        w = rng.normal(size=(3, 2, 3, 3))
        v = rng.normal(size=(2, 3, 4, 3))

        gradcheck(lambda a, b: (F.conv2d(a, b) * Tensor(v)).sum(), x, w)

    def test_depthwise_conv2d_gradient(self, gradcheck, rng):
        x = rng.normal(size=(2, 3, 4, 4))
        w = rng.normal(size=(3, 3, 3))
        v = rng.normal(size=(2, 3, 4, 4))

        gradcheck(lambda a, b: (F.depthwise_conv2d(a, b) * Tensor(v)).sum(), x, w)

    def test_pointwise_conv_gradient(self, gradcheck, rng):
        x = rng.normal(size=(2, 3, 2, 2))
        w = rng.normal(size=(4, 3))
        v = rng.normal(size=(2, 4, 2, 2))

        gradcheck(lambda a, b: (F.pointwise_conv(a, b) * Tensor(v)).sum(), x, w)

    def test_linear_gradient(self, gradcheck, rng):
        x = rng.normal(size=(2, 3, 4))
        w = rng.normal(size=(4, 2))
        b = rng.normal(size=(2,))

        gradcheck(lambda a, m, c: (F.linear(a, m, c) ** 2).sum(), x, w, b)


class TestPooling:

    def test_max_pool_values(self, float64):
        x = Tensor(np.arange(16.0).reshape(1, 1, 4, 4))

        np.testing.assert_array_equal(
            F.max_pool2d(x, (2, 2)).data[0, 0], [[5.0, 7.0], [13.0, 15.0]]
        )

    def test_max_pool_ties_go_to_first(self, float64):
        """A tied window sends its gradient to the first maximal element."""
        x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
        F.max_pool2d(x, (2, 2)).sum().backward()

        np.testing.assert_array_equal(x.grad[0, 0], [[1.0, 0.0], [0.0, 0.0]])

    def test_max_pool_gradient(self, gradcheck, rng):
        x = rng.permutation(48).astype(np.float64).reshape(1, 2, 4, 6)
        v = rng.normal(size=(1, 2, 2, 2))

        gradcheck(lambda a: (F.max_pool2d(a, (2, 3)) * Tensor(v)).sum(), x)

    def test_avg_pool_values(self, float64):
        x = Tensor(np.arange(8.0).reshape(1, 4, 2))

        np.testing.assert_allclose(F.avg_pool2d(x, (2, 1)).data[0], [[1.0, 2.0], [5.0, 6.0]])

    def test_pool_rejects_non_divisible_extent(self, float64):
        """The error names the offending axis."""
        with pytest.raises(ConfigurationError, match="time axis"):
            F.max_pool2d(Tensor(np.zeros((1, 1, 5, 4))), (2, 2))
        with pytest.raises(ConfigurationError, match="frequency axis"):
            F.avg_pool2d(Tensor(np.zeros((1, 4, 3))), (1, 2))


class TestUnfoldFold:

    def test_unfold_element_layout(self, float64, rng):
        """Output (c*kt*kf + i*kf + j, p, q) equals input (c, p*kt + i, q*kf + j)."""
        x = rng.normal(size=(2, 3, 6, 8))
        kt, kf = 3, 2
        u = F.unfold(Tensor(x), kt, kf).data

        assert u.shape == (2, 3 * kt * kf, 2, 4)
        c, i, j, p, q = 2, 1, 1, 1, 3
        assert u[1, c * kt * kf + i * kf + j, p, q] == x[1, c, p * kt + i, q * kf + j]

    def test_fold_inverts_unfold(self, float64, rng):
        x = rng.normal(size=(1, 2, 4, 6))

        np.testing.assert_array_equal(F.fold(F.unfold(Tensor(x), 2, 3), 2, 3).data, x)

    def test_small_patch_packing(self, float64):
        x = Tensor(np.array([[[1.0, 2.0], [3.0, 4.0]]]))

        u = F.unfold(x, 2, 2)

        assert u.shape == (4, 1, 1)
        np.testing.assert_array_equal(u.data.ravel(), [1.0, 2.0, 3.0, 4.0])
        np.testing.assert_array_equal(F.fold(u, 2, 2).data, x.data)

    def test_randomized_round_trips(self, float64, rng):
        """fold(unfold(x)) == x and unfold(fold(y)) == y for random shapes and kernels."""
        for _ in range(1000):
            kt, kf = rng.integers(1, 5, size=2)
            nt, nf, c, b = rng.integers(1, 4, size=4)
            x = rng.normal(size=(b, c, nt * kt, nf * kf))
            y = rng.normal(size=(b, c * kt * kf, nt, nf))

            np.testing.assert_array_equal(F.fold(F.unfold(Tensor(x), kt, kf), kt, kf).data, x)
            np.testing.assert_array_equal(F.unfold(F.fold(Tensor(y), kt, kf), kt, kf).data, y)

    def test_unfold_gradient(self, gradcheck, rng):
        x = rng.normal(size=(1, 2, 4, 4))
        v = rng.normal(size=(1, 8, 2, 2))

        gradcheck(lambda a: (F.unfold(a, 2, 2) * Tensor(v)).sum(), x)

    def test_fold_gradient(self, gradcheck, rng):
        y = rng.normal(size=(1, 8, 2, 2))
        v = rng.normal(size=(1, 2, 4, 4))

        gradcheck(lambda a: (F.fold(a, 2, 2) * Tensor(v)).sum(), y)

    def test_fold_rejects_bad_channel_extent(self, float64):
        with pytest.raises(ConfigurationError, match="channel axis"):
            F.fold(Tensor(np.zeros((1, 5, 2, 2))), 2, 2)

    def test_unfold_rejects_non_divisible_extent(self, float64):
        with pytest.raises(ConfigurationError, match="time axis"):
            F.unfold(Tensor(np.zeros((1, 2, 5, 4))), 2, 2)


class TestJoinsAndReductions:

    def test_concat_gradient(self, gradcheck, rng):
        a = rng.normal(size=(2, 3))
        b = rng.normal(size=(4, 3))
        v = rng.normal(size=(6, 3))

        gradcheck(lambda x, y: (F.concat([x, y], axis=0) * Tensor(v)).sum(), a, b)

    def test_median_odd_and_even(self, float64):
        """Even counts average the two middle elements."""
        odd = Tensor(np.array([[3.0], [1.0], [2.0]]))
        even = Tensor(np.array([[4.0], [1.0], [3.0], [2.0]]))

        np.testing.assert_allclose(F.median(odd, axis=0).data, [2.0])
        np.testing.assert_allclose(F.median(even, axis=0).data, [2.5])

    def test_median_gradient_goes_to_middle(self, float64):
        x = Tensor(np.array([4.0, 1.0, 3.0, 2.0]), requires_grad=True)
        F.median(x, axis=0).backward()

        np.testing.assert_allclose(x.grad, [0.0, 0.0, 0.5, 0.5])

    @pytest.mark.parametrize("count", [5, 4])
    def test_median_gradient(self, count, gradcheck, rng):
        """Distinct values keep the middle of the sort order fixed under small steps."""
        x = rng.permutation(np.arange(count * 3 * 2, dtype=float)).reshape(3, count, 2) * 0.1
        w = rng.normal(size=(3, 2))

        gradcheck(lambda a: (F.median(a, axis=1) * Tensor(w)).sum(), x)

    def test_norm_gradient_and_zero_vector(self, gradcheck, rng):
        """Zero vectors get zero gradient instead of NaN."""
        gradcheck(lambda a: F.norm(a, axis=-1).sum(), rng.normal(size=(3, 3)))

        x = Tensor(np.zeros((1, 3)), requires_grad=True)
        F.norm(x, axis=-1).sum().backward()
        np.testing.assert_array_equal(x.grad, 0.0)
