import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robustpipe.enrich import EnrichSpec, mixup, mixup_c_alpha, smooth_labels, vrm_expand


class TestVrm:
    def test_tiny_sigma_is_identity(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(5, 3))
        Xe, _ = vrm_expand(X, np.arange(5), 1e-12, 1, rng)
        np.testing.assert_allclose(Xe, X, atol=1e-9)

    def test_replica_bookkeeping(self):
        X = np.array([[0.0, 1.0], [2.0, 3.0]])
        Xe, ye = vrm_expand(X, np.array([4, 7]), 0.1, 3, np.random.default_rng(1))
        assert Xe.shape == (6, 2)
        np.testing.assert_array_equal(ye, [4, 7, 4, 7, 4, 7])

    def test_soft_targets_copied_per_replica(self):
        T = np.array([[0.2, 0.8], [1.0, 0.0]])
        _, te = vrm_expand(np.zeros((2, 1)), T, 0.5, 2, np.random.default_rng(0))
        np.testing.assert_array_equal(te, np.vstack([T, T]))

    def test_noise_variance(self):
        sigma = 0.7
        Xe, _ = vrm_expand(np.zeros((1, 2)), np.zeros(1), sigma, 100_000, np.random.default_rng(2))
        var = Xe.var(axis=0, ddof=1)
        assert np.all((var >= 0.98 * sigma**2) & (var <= 1.02 * sigma**2))

    def test_seeded(self):
        X = np.ones((3, 2))
        a, _ = vrm_expand(X, np.zeros(3), 0.3, 2, np.random.default_rng(5))
        b, _ = vrm_expand(X, np.zeros(3), 0.3, 2, np.random.default_rng(5))
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("sigma,k", [(0.0, 1), (0.1, 0)])
    def test_errors(self, sigma, k):
        with pytest.raises(ValueError):
            vrm_expand(np.zeros((1, 1)), np.zeros(1), sigma, k, np.random.default_rng())


class TestMixup:
    def test_self_partner_fixed_point(self):
        X = np.array([[1.0, 2.0], [3.0, -4.0]])
        T = np.eye(2)
        Xm, Tm = mixup(X, T, 1.0, None, partners=[0, 1], lam=[0.3, 0.9])
        np.testing.assert_array_equal(Xm, X)
        np.testing.assert_array_equal(Tm, T)

    def test_explicit_combination(self):
        X = np.array([[0.0], [10.0]])
        T = np.array([[1.0, 0.0], [0.0, 1.0]])
        Xm, Tm = mixup(X, T, 1.0, None, partners=[1, 0], lam=[0.25, 0.5])
        np.testing.assert_allclose(Xm, [[7.5], [5.0]])
        np.testing.assert_allclose(Tm, [[0.25, 0.75], [0.5, 0.5]])

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**31), a=st.floats(0.05, 5.0), k=st.integers(2, 6))
    def test_targets_stay_on_simplex(self, seed, a, k):
        rng = np.random.default_rng(seed)
        T = np.eye(k)[rng.integers(k, size=20)]
        _, Tm = mixup(rng.normal(size=(20, 3)), T, a, rng)
        assert np.all((Tm >= 0) & (Tm <= 1))
        np.testing.assert_allclose(Tm.sum(axis=1), 1.0, atol=1e-12)

    def test_lambda_moment(self):
        lam = np.random.default_rng(3).beta(1.0, 1.0, size=1_000_000)
        assert abs(np.mean(lam * (1 - lam)) - 1 / 6) < 1e-3

    def test_rejects_class_indices_and_pairs(self):
        with pytest.raises(ValueError):
            mixup(np.zeros((2, 1)), np.array([0, 1]), 1.0, np.random.default_rng())
        with pytest.raises(ValueError):
            mixup(np.zeros((2, 1)), np.zeros(2), 1.0, np.random.default_rng(), pairwise=True)
        with pytest.raises(ValueError):
            mixup(np.zeros((2, 1)), np.zeros(2), 0.0, np.random.default_rng())


class TestCAlpha:
    def test_uniform(self):
        assert mixup_c_alpha(1.0) == pytest.approx(1 / 6, abs=1e-15)

    def test_infinite_limit(self):
        assert mixup_c_alpha(np.inf) == 0.25
        assert mixup_c_alpha(1e9) == pytest.approx(0.25, abs=1e-9)

    @pytest.mark.parametrize("a", [0.1, 0.4, 2.0, 8.0])
    def test_monte_carlo(self, a):
        lam = np.random.default_rng(int(a * 10)).beta(a, a, size=200_000)
        v = lam * (1 - lam)
        se = v.std(ddof=1) / np.sqrt(v.size)
        assert abs(v.mean() - mixup_c_alpha(a)) <= 3 * se

    def test_error(self):
        with pytest.raises(ValueError):
            mixup_c_alpha(0.0)


class TestSmoothing:
    def test_zero_unchanged(self):
        np.testing.assert_array_equal(smooth_labels(np.array([2, 0]), 0.0, 3), np.eye(3)[[2, 0]])

    def test_full_uniform(self):
        np.testing.assert_allclose(smooth_labels(np.array([1]), 1.0, 4), np.full((1, 4), 0.25))

    def test_worked_value(self):
        np.testing.assert_allclose(smooth_labels(np.array([0]), 0.3, 3), [[0.8, 0.1, 0.1]], atol=1e-15)

    def test_accepts_one_hot_rows(self):
        np.testing.assert_allclose(smooth_labels(np.eye(3)[[0]], 0.3, 3), [[0.8, 0.1, 0.1]], atol=1e-15)

    @settings(max_examples=30, deadline=None)
    @given(a=st.floats(0.0, 1.0), k=st.integers(2, 8), seed=st.integers(0, 1000))
    def test_rows_are_distributions(self, a, k, seed):
        y = np.random.default_rng(seed).integers(k, size=5)
        t = smooth_labels(y, a, k)
        assert np.all(t >= 0)
        np.testing.assert_allclose(t.sum(axis=1), 1.0, atol=1e-12)


class TestSpec:
    @pytest.mark.parametrize(
        "kw", [dict(mode="vrm", sigma=0.0), dict(mode="mixup", alpha_mix=0.0), dict(label_smoothing=1.5), dict(mode="cutmix"), dict(replicas=0)]
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            EnrichSpec(**kw)

    def test_active(self):
        assert not EnrichSpec().active
        assert EnrichSpec(label_smoothing=0.1).active
        assert EnrichSpec("vrm", sigma=0.1).active
