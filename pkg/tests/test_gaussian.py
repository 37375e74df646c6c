import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import eigh
from scipy.stats import multivariate_normal

from missknock.errors import NotPositiveDefinite, SingularObservedBlock
from missknock.gaussian import (
    GaussianConditional,
    GaussianImputer,
    GaussianKnockoffSampler,
    _cholesky_with_jitter,
    build_gaussian_knockoff_sampler,
    equicorrelated_s,
    knockoff_joint_covariance,
    mvn_condition,
    mvn_marginal,
    psd_factor,
    sample_conditional,
    sample_gaussian_knockoff,
)
from missknock.models import MaskedSample, MvnModel, make_ar1_covariance, random_mvn_model, swap


def _cov_se(cov, n):
    """Standard error of each entry of a Gaussian sample covariance."""
    d = np.diag(cov)
    return np.sqrt((np.outer(d, d) + cov**2) / n)


class TestCondition:
    def test_bivariate_example(self):
        model = MvnModel(np.zeros(2), [[1, 0.5], [0.5, 1]])
        cond = mvn_condition(model, MaskedSample(np.array([np.nan, 1.0]), [True, False]))
        assert cond.mean[0] == pytest.approx(0.5)
        assert cond.covariance[0, 0] == pytest.approx(0.75)

    def test_nothing_observed_returns_marginal(self):
        model = MvnModel(np.array([1.0, -2.0]), [[2, 0.3], [0.3, 1]])
        cond = mvn_condition(model, MaskedSample(np.full(2, np.nan), [True, True]))
        np.testing.assert_array_equal(cond.mean, model.mean)
        np.testing.assert_array_equal(cond.covariance, model.covariance)

    def test_matches_grid_discretization(self):
        cov = make_ar1_covariance(3, 0.5)
        model = MvnModel(np.zeros(3), cov)
        cond = mvn_condition(model, MaskedSample(np.array([1.0, np.nan, -1.0]), [False, True, False]))
        grid = np.linspace(-8, 8, 40_001)
        pts = np.column_stack([np.ones_like(grid), grid, -np.ones_like(grid)])
        dens = multivariate_normal(np.zeros(3), cov).pdf(pts)
        w = dens / dens.sum()
        mean = np.sum(w * grid)
        var = np.sum(w * (grid - mean) ** 2)
        assert cond.mean[0] == pytest.approx(mean, abs=1e-3)
        assert cond.covariance[0, 0] == pytest.approx(var, abs=1e-3)

    @given(st.integers(0, 2**32 - 1))
    def test_tower_property(self, seed):
        rng = np.random.default_rng(seed)
        model = random_mvn_model(rng, 5)
        x = model.sample(1, rng)[0]
        inner = rng.random(5) < 0.5  # missing after the first conditioning
        outer = inner & (rng.random(5) < 0.6)  # missing after the second, subset of inner
        if not outer.any():
            outer[np.flatnonzero(inner)[:1]] = True
            if not outer.any():
                inner[0] = outer[0] = True
        first = mvn_condition(model, MaskedSample.from_complete(x, inner))
        sub_model = MvnModel(first.mean, first.covariance)
        sub_mask = outer[inner]
        two_step = mvn_condition(sub_model, MaskedSample.from_complete(x[inner], sub_mask))
        direct = mvn_condition(model, MaskedSample.from_complete(x, outer))
        np.testing.assert_allclose(two_step.mean, direct.mean, atol=1e-10)
        np.testing.assert_allclose(two_step.covariance, direct.covariance, atol=1e-10)


class TestSampleConditional:
    def test_zero_covariance_returns_mean(self, rng):
        cond = GaussianConditional(np.array([1.5, -2.0]), np.zeros((2, 2)), np.arange(2), np.arange(0), np.zeros(0))
        np.testing.assert_array_equal(sample_conditional(cond, rng), [1.5, -2.0])

    def test_one_dimensional_moments(self, rng):
        cond = GaussianConditional(np.array([0.7]), np.array([[2.5]]), np.arange(1), np.arange(0), np.zeros(0))
        draws = np.array([sample_conditional(cond, rng)[0] for _ in range(100_000)])
        n = draws.size
        assert abs(draws.mean() - 0.7) < 4 * np.sqrt(2.5 / n)
        assert abs(draws.var() - 2.5) < 4 * 2.5 * np.sqrt(2 / n)

    def test_deterministic_under_seed(self):
        cond = GaussianConditional(np.zeros(3), np.eye(3), np.arange(3), np.arange(0), np.zeros(0))
        a = sample_conditional(cond, np.random.default_rng(5))
        b = sample_conditional(cond, np.random.default_rng(5))
        np.testing.assert_array_equal(a, b)

    def test_empty_observed_matches_unconditional_moments(self, rng):
        model = MvnModel(np.array([1.0, -1.0]), [[1.0, 0.6], [0.6, 2.0]])
        imputer = GaussianImputer(model)
        blank = MaskedSample(np.full(2, np.nan), [True, True])
        draws = np.array([imputer(blank, rng) for _ in range(50_000)])
        n = draws.shape[0]
        se_mean = np.sqrt(np.diag(model.covariance) / n)
        assert np.all(np.abs(draws.mean(0) - model.mean) < 4 * se_mean)
        assert np.all(np.abs(np.cov(draws.T) - model.covariance) < 4 * _cov_se(model.covariance, n))


class TestJitter:
    def test_rank_deficient_block_rescued(self):
        L = _cholesky_with_jitter(np.ones((2, 2)))
        np.testing.assert_allclose(L @ L.T, np.ones((2, 2)), atol=1e-8)

    def test_indefinite_block_raises(self):
        with pytest.raises(SingularObservedBlock):
            _cholesky_with_jitter(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_psd_factor_singular(self):
        cov = np.array([[1.0, 1.0], [1.0, 1.0]])
        f = psd_factor(cov)
        np.testing.assert_allclose(f @ f.T, cov, atol=1e-12)

    def test_imputer_with_duplicated_observed_column(self, rng):
        cov = np.array([[1.0, 1.0, 0.5], [1.0, 1.0, 0.5], [0.5, 0.5, 1.0]])
        model = MvnModel(np.zeros(3), cov)
        out = GaussianImputer(model)(MaskedSample(np.array([0.3, 0.3, np.nan]), [False, False, True]), rng)
        assert np.isfinite(out).all()


class TestEquicorrelated:
    def test_rho_half(self):
        np.testing.assert_allclose(equicorrelated_s(np.array([[1, 0.5], [0.5, 1]])), [1.0, 1.0])

    def test_rho_point_eight(self):
        np.testing.assert_allclose(equicorrelated_s(np.array([[1, 0.8], [0.8, 1]])), [0.4, 0.4])

    def test_ar1_against_independent_eigensolver(self):
        cov = make_ar1_covariance(5, 0.6)
        lam = eigh(cov, eigvals_only=True)[0]
        s = equicorrelated_s(cov)
        np.testing.assert_allclose(s, min(2 * lam, 1.0))
        G = knockoff_joint_covariance(cov, s)
        assert eigh(G, eigvals_only=True)[0] > -1e-10

    def test_covariance_scale(self):
        cov = np.diag([4.0, 9.0])
        np.testing.assert_allclose(equicorrelated_s(cov), [4.0, 9.0])

    def test_singular_model_rejected(self):
        with pytest.raises(NotPositiveDefinite):
            build_gaussian_knockoff_sampler(MvnModel(np.zeros(2), np.ones((2, 2))))

    @given(st.integers(0, 2**32 - 1))
    def test_sampler_invariants(self, seed):
        model = random_mvn_model(np.random.default_rng(seed), 4)
        sampler = build_gaussian_knockoff_sampler(model)
        assert np.all(sampler.s_vector >= 0)
        assert np.all(sampler.s_vector <= 2 * np.diag(model.covariance) + 1e-12)
        assert np.linalg.eigvalsh(sampler.conditional_cov)[0] > -1e-8
        assert np.linalg.eigvalsh(knockoff_joint_covariance(model.covariance, sampler.s_vector))[0] > -1e-8


class TestKnockoffSampling:
    def test_zero_s_copies_input(self, rng):
        p = 3
        sampler = GaussianKnockoffSampler(np.zeros(p), np.zeros(p), np.eye(p), np.zeros((p, p)), np.zeros((p, p)))
        x = np.array([0.1, -2.0, 3.0])
        np.testing.assert_array_equal(sample_gaussian_knockoff(sampler, x, rng), x)

    def test_joint_covariance_and_swaps(self, rng):
        cov = make_ar1_covariance(3, 0.5)
        model = MvnModel(np.zeros(3), cov)
        sampler = build_gaussian_knockoff_sampler(model)
        n = 100_000
        x = model.sample(n, rng)
        xt = sample_gaussian_knockoff(sampler, x, rng)
        G = knockoff_joint_covariance(cov, sampler.s_vector)
        se = _cov_se(G, n)
        emp = np.cov(np.hstack([x, xt]).T)
        assert np.all(np.abs(emp - G) < 4 * se)
        for S in ([0], [1, 2], [0, 1, 2]):
            a, b = swap(x, xt, S)
            emp_s = np.cov(np.hstack([a, b]).T)
            assert np.all(np.abs(emp_s - G) < 4 * se)
            assert np.all(np.abs(np.hstack([a, b]).mean(0)) < 4 * np.sqrt(1.0 / n))

    def test_correlation_with_own_knockoff(self, rng):
        cov = np.array([[1.0, 0.5], [0.5, 1.0]])
        model = MvnModel(np.zeros(2), cov)
        sampler = build_gaussian_knockoff_sampler(model)
        n = 100_000
        x = model.sample(n, rng)
        xt = sampler(x, rng)
        target = 1 - sampler.s_vector[0]
        r = np.corrcoef(x[:, 0], xt[:, 0])[0, 1]
        assert abs(r - target) < 4 * (1 - target**2) / np.sqrt(n)

    def test_wrong_dimension(self, rng):
        sampler = build_gaussian_knockoff_sampler(MvnModel(np.zeros(2), np.eye(2)))
        with pytest.raises(ValueError):
            sampler(np.zeros(3), rng)


class TestMarginal:
    def test_standard_normal(self):
        assert mvn_marginal(MvnModel(np.zeros(3), np.eye(3)), 1) == (0.0, 1.0)

    def test_ar1_unit_diagonal(self):
        model = MvnModel(np.zeros(4), make_ar1_covariance(4, 0.7))
        assert all(mvn_marginal(model, j) == (0.0, 1.0) for j in range(4))

    def test_shifted(self):
        assert mvn_marginal(MvnModel(np.array([2.0, 0.0]), np.eye(2)), 0)[0] == 2.0
