"""Exact Gaussian conditioning, posterior imputation and Gaussian knockoffs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

from .errors import NotPositiveDefinite, SingularObservedBlock
from .models import MaskedSample, MvnModel

_JITTER = 1e-10


@dataclass(frozen=True)
class GaussianConditional:
    """Law of ``X_m`` given ``X_o = x_o``."""

    mean: np.ndarray
    covariance: np.ndarray
    missing: np.ndarray
    observed: np.ndarray
    observed_values: np.ndarray


def _cholesky_with_jitter(block: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(block)
    except np.linalg.LinAlgError:
        pass
    bump = _JITTER * np.trace(block) / block.shape[0]
    try:
        return np.linalg.cholesky(block + bump * np.eye(block.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise SingularObservedBlock(f"observed block of size {block.shape[0]} is singular") from exc


def psd_factor(cov: np.ndarray) -> np.ndarray:
    """Some ``L`` with ``L @ L.T == cov`` for a PSD (possibly singular) matrix."""
    if cov.size == 0:
        return cov.copy()
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh((cov + cov.T) / 2)
        if vals[0] < -1e-8 * max(1.0, vals[-1]):
            raise
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


class _ConditioningPlan:
    """Regression map and residual covariance for one missingness pattern."""

    def __init__(self, model: MvnModel, mask: np.ndarray):
        m = np.flatnonzero(mask)
        o = np.flatnonzero(~mask)
        cov = model.covariance
        self.missing, self.observed = m, o
        if o.size == 0:
            self.coef = np.zeros((m.size, 0))
            self.cond_cov = cov[np.ix_(m, m)].copy()
        else:
            chol = _cholesky_with_jitter(cov[np.ix_(o, o)])
            cross = cov[np.ix_(m, o)]
            self.coef = cho_solve((chol, True), cross.T).T
            self.cond_cov = cov[np.ix_(m, m)] - self.coef @ cross.T
            self.cond_cov = (self.cond_cov + self.cond_cov.T) / 2
        self._factor = None

    @property
    def factor(self) -> np.ndarray:
        if self._factor is None:
            self._factor = psd_factor(self.cond_cov)
        return self._factor

    def condition(self, model: MvnModel, x_o: np.ndarray) -> GaussianConditional:
        mu = model.mean
        mean = mu[self.missing] + self.coef @ (x_o - mu[self.observed])
        return GaussianConditional(mean, self.cond_cov, self.missing, self.observed, x_o)


def mvn_condition(model: MvnModel, sample: MaskedSample) -> GaussianConditional:
    """Conditional law of the missing block given the observed one."""
    plan = _ConditioningPlan(model, sample.mask)
    return plan.condition(model, sample.observed_values.astype(float))


def sample_conditional(cond: GaussianConditional, rng, factor=None) -> np.ndarray:
    if factor is None:
        factor = psd_factor(cond.covariance)
    z = rng.standard_normal(cond.mean.size)
    return cond.mean + factor @ z


def mvn_marginal(model: MvnModel, j: int) -> tuple[float, float]:
    return float(model.mean[j]), float(model.covariance[j, j])


class GaussianImputer:
    """Posterior imputation for an MVN model with per-pattern caching."""

    def __init__(self, model: MvnModel):
        self.model = model
        self._plans: dict[bytes, _ConditioningPlan] = {}

    def plan(self, mask: np.ndarray) -> _ConditioningPlan:
        key = np.packbits(mask).tobytes() + bytes([mask.size % 8])
        plan = self._plans.get(key)
        if plan is None:
            plan = self._plans[key] = _ConditioningPlan(self.model, mask)
        return plan

    def __call__(self, sample: MaskedSample, rng) -> np.ndarray:
        """Complete the row with a draw of ``X_m`` from ``P(X_m | X_o)``."""
        x = sample.values.astype(float).copy()
        if not sample.mask.any():
            return x
        plan = self.plan(sample.mask)
        cond = plan.condition(self.model, x[plan.observed])
        x[plan.missing] = sample_conditional(cond, rng, plan.factor)
        return x


@dataclass(frozen=True)
class GaussianKnockoffSampler:
    """Equicorrelated model-X knockoffs for ``N(mean, Sigma)``.

    Given ``x`` the knockoff is drawn from
    ``N(mean + A (x - mean), V)`` with ``A = I - D Sigma^{-1}`` and
    ``V = 2D - D Sigma^{-1} D``.
    """

    mean: np.ndarray
    s_vector: np.ndarray
    conditional_mean_map: np.ndarray
    conditional_cov: np.ndarray
    factor: np.ndarray

    @property
    def p(self) -> int:
        return self.s_vector.size

    def __call__(self, x, rng) -> np.ndarray:
        return sample_gaussian_knockoff(self, x, rng)


def equicorrelated_s(cov: np.ndarray) -> np.ndarray:
    """``s_j = min(2 lambda_min(corr), 1)`` mapped back to the covariance scale."""
    scale = np.sqrt(np.diag(cov))
    if np.any(scale <= 0):
        raise NotPositiveDefinite("covariance has a non-positive diagonal entry")
    corr = cov / np.outer(scale, scale)
    lam_min = np.linalg.eigvalsh(corr)[0]
    if lam_min <= 0:
        raise NotPositiveDefinite(f"smallest correlation eigenvalue is {lam_min:.3g}")
    return min(2.0 * lam_min, 1.0) * scale**2


def build_gaussian_knockoff_sampler(model: MvnModel) -> GaussianKnockoffSampler:
    cov = model.covariance
    s = equicorrelated_s(cov)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("covariance is not positive definite") from exc
    sigma_inv_d = cho_solve((chol, True), np.diag(s))  # Sigma^{-1} D
    mean_map = np.eye(model.p) - sigma_inv_d.T
    cond_cov = 2.0 * np.diag(s) - np.diag(s) @ sigma_inv_d
    cond_cov = (cond_cov + cond_cov.T) / 2
    return GaussianKnockoffSampler(model.mean, s, mean_map, cond_cov, psd_factor(cond_cov))


def sample_gaussian_knockoff(sampler: GaussianKnockoffSampler, x, rng) -> np.ndarray:
    """Knockoff draw for one row, or for every row of a matrix."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != sampler.p:
        raise ValueError("x has the wrong dimension for this sampler")
    centered = x - sampler.mean
    noise = rng.standard_normal(x.shape)
    return sampler.mean + centered @ sampler.conditional_mean_map.T + noise @ sampler.factor.T


def knockoff_joint_covariance(cov: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Covariance of the stacked vector ``(X, X_tilde)``."""
    off = cov - np.diag(s)
    return np.block([[cov, off], [off, cov]])
