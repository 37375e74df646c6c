"""Generic missing-value knockoff pipelines and the imputation MSE comparison.

``posterior_knockoffs`` completes every row with a draw from ``P(X_m | X_o)``
and hands the completed row to an ordinary knockoff sampler for ``P_X``.
``univariate_knockoffs`` draws knockoffs for the observed block only, with a
sampler built for the observed pattern, and fills the missing coordinates of
both the row and its knockoff with independent draws from the univariate
marginals. The second pipeline needs MCAR missingness.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import partial, singledispatch
from typing import Callable, Sequence

import numpy as np

from . import discrete, hmm, latent
from .errors import MarMechanismRefused, PatternSamplerError
from .gaussian import GaussianImputer, build_gaussian_knockoff_sampler
from .models import (
    DiscreteModel,
    HmmModel,
    KnockoffPair,
    LatentFactorModel,
    MaskedSample,
    MvnModel,
)
from .rng import categorical, spawn

__all__ = [
    "KnockoffPair",
    "MseReport",
    "make_posterior_imputer",
    "make_marginal_sampler",
    "posterior_knockoffs",
    "univariate_knockoffs",
    "gaussian_observed_factory",
    "scip_observed_factory",
    "stack_pairs",
    "mse_compare",
]


@singledispatch
def make_posterior_imputer(model) -> Callable:
    """Callable ``(sample, rng) -> completed row`` drawing ``X_m ~ P(X_m | X_o)``."""
    raise TypeError(f"no posterior imputer for {type(model).__name__}")


@make_posterior_imputer.register
def _(model: MvnModel):
    return GaussianImputer(model)


@make_posterior_imputer.register
def _(model: DiscreteModel):
    return partial(discrete.impute_posterior, model)


@make_posterior_imputer.register
def _(model: HmmModel):
    return partial(hmm.impute_posterior, model)


@make_posterior_imputer.register
def _(model: LatentFactorModel):
    return partial(latent.impute_posterior, model)


@singledispatch
def make_marginal_sampler(model) -> Callable:
    """Callable ``(j, rng) -> value`` drawing from the marginal of coordinate ``j``."""
    raise TypeError(f"no marginal sampler for {type(model).__name__}")


@make_marginal_sampler.register
def _(model: MvnModel):
    sd = np.sqrt(np.diag(model.covariance))

    def draw(j, rng):
        return model.mean[j] + sd[j] * rng.standard_normal()

    return draw


def _table_marginal_sampler(marginals):
    def draw(j, rng):
        return categorical(rng, marginals[j])

    return draw


@make_marginal_sampler.register
def _(model: DiscreteModel):
    return _table_marginal_sampler([discrete.univariate_marginal(model, j) for j in range(model.p)])


@make_marginal_sampler.register
def _(model: HmmModel):
    latent_marg = hmm.latent_marginals(model)
    marg = [latent_marg[t] @ model.emission_at(t) for t in range(model.length)]
    return _table_marginal_sampler(marg)


@make_marginal_sampler.register
def _(model: LatentFactorModel):
    return _table_marginal_sampler([latent.univariate_marginal(model, j) for j in range(model.p)])


def posterior_knockoffs(
    rows: Sequence[MaskedSample],
    model,
    knockoff_sampler: Callable,
    rng,
    imputer: Callable | None = None,
) -> list[KnockoffPair]:
    """Posterior imputation followed by an unmodified knockoff sampler.

    ``knockoff_sampler(x, rng)`` must be pairwise exchangeable with respect to
    the law of ``X``. ``imputer`` overrides the model's posterior imputer.
    Each row gets its own child stream of ``rng``.
    """
    if imputer is None:
        imputer = make_posterior_imputer(model)
    out = []
    for row, row_rng in zip(rows, spawn(rng, len(rows))):
        x_hat = imputer(row, row_rng)
        x_tilde = knockoff_sampler(x_hat, row_rng)
        out.append(KnockoffPair(x_hat, np.asarray(x_tilde), row.mask))
    return out


def gaussian_observed_factory(model: MvnModel) -> Callable:
    """Knockoff sampler factory for the observed block of an MVN model."""
    return lambda observed: build_gaussian_knockoff_sampler(model.restrict(observed))


def scip_observed_factory(model: DiscreteModel) -> Callable:
    return lambda observed: discrete.ScipKnockoffSampler(model.marginal(observed))


def univariate_knockoffs(
    rows: Sequence[MaskedSample],
    model,
    observed_knockoff_factory: Callable,
    rng,
    mechanism: str = "MCAR",
    allow_mar: bool = False,
    marginal_sampler: Callable | None = None,
) -> list[KnockoffPair]:
    """Knockoffs for the observed block plus independent univariate imputation.

    ``observed_knockoff_factory(o)`` returns a sampler ``(x_o, rng) -> x_tilde_o``
    that is pairwise exchangeable for the marginal law of ``X_o``; samplers are
    cached per missingness pattern.
    """
    if mechanism.upper() != "MCAR":
        if not allow_mar:
            raise MarMechanismRefused(
                f"univariate imputation knockoffs require MCAR missingness, got {mechanism}"
            )
        warnings.warn(
            f"running univariate imputation knockoffs under {mechanism}; exchangeability is not guaranteed",
            stacklevel=2,
        )
    draw_marginal = marginal_sampler or make_marginal_sampler(model)
    samplers: dict[bytes, Callable] = {}
    out = []
    for row, row_rng in zip(rows, spawn(rng, len(rows))):
        o, m = row.observed, row.missing
        x_hat = np.array(row.values, copy=True)
        x_tilde = np.empty_like(x_hat)
        if o.size:
            key = row.mask.tobytes()
            sampler = samplers.get(key)
            if sampler is None:
                try:
                    sampler = samplers[key] = observed_knockoff_factory(o)
                except Exception as exc:
                    raise PatternSamplerError(row.mask, exc) from exc
            x_tilde[o] = sampler(x_hat[o], row_rng)
        for j in m:
            x_hat[j] = draw_marginal(j, row_rng)
            x_tilde[j] = draw_marginal(j, row_rng)
        out.append(KnockoffPair(x_hat, x_tilde, row.mask))
    return out


def stack_pairs(pairs: Sequence[KnockoffPair]) -> tuple[np.ndarray, np.ndarray]:
    """Imputed and knockoff matrices, one row per pair."""
    return np.vstack([pr.imputed for pr in pairs]), np.vstack([pr.knockoff for pr in pairs])


@dataclass(frozen=True)
class MseReport:
    mse_posterior: float
    mse_univariate: float
    analytic_posterior: float
    analytic_univariate: float
    se_posterior: float
    se_univariate: float

    @property
    def se_combined(self) -> float:
        return float(np.hypot(self.se_posterior, self.se_univariate))


def _report(y, y_post, y_uni, analytic_post, analytic_uni) -> MseReport:
    err_post = (y - y_post) ** 2
    err_uni = (y - y_uni) ** 2
    n = y.size
    return MseReport(
        float(err_post.mean()),
        float(err_uni.mean()),
        float(analytic_post),
        float(analytic_uni),
        float(err_post.std(ddof=1) / np.sqrt(n)),
        float(err_uni.std(ddof=1) / np.sqrt(n)),
    )


def mse_compare(model, target_index: int, num_samples: int, rng) -> MseReport:
    """Monte Carlo and analytic MSE of posterior versus univariate imputation of one coordinate.

    ``Y`` is coordinate ``target_index`` and ``X`` the remaining coordinates.
    Analytic values are ``2 (Var Y - Var E[Y|X])`` and ``2 Var Y``.
    """
    if isinstance(model, MvnModel):
        return _mse_gaussian(model, target_index, num_samples, rng)
    if isinstance(model, DiscreteModel):
        return _mse_discrete(model, target_index, num_samples, rng)
    raise TypeError(f"mse_compare does not support {type(model).__name__}")


def _mse_gaussian(model: MvnModel, j: int, n: int, rng) -> MseReport:
    cov, mu = model.covariance, model.mean
    rest = np.array([i for i in range(model.p) if i != j])
    var_y = cov[j, j]
    if rest.size:
        coef = np.linalg.solve(cov[np.ix_(rest, rest)], cov[rest, j])
        var_cond_mean = float(cov[j, rest] @ coef)
    else:
        coef = np.zeros(0)
        var_cond_mean = 0.0
    x = model.sample(n, rng)
    y = x[:, j]
    cond_mean = mu[j] + (x[:, rest] - mu[rest]) @ coef
    cond_sd = np.sqrt(max(var_y - var_cond_mean, 0.0))
    y_post = cond_mean + cond_sd * rng.standard_normal(n)
    y_uni = mu[j] + np.sqrt(var_y) * rng.standard_normal(n)
    return _report(y, y_post, y_uni, 2 * (var_y - var_cond_mean), 2 * var_y)


def _mse_discrete(model: DiscreteModel, j: int, n: int, rng) -> MseReport:
    table = model.table
    values = np.arange(table.shape[j], dtype=float)
    # conditional of X_j given the rest, with X_j moved to the last axis
    moved = np.moveaxis(table, j, -1)
    rest_prob = moved.sum(axis=-1)
    cond = np.divide(moved, rest_prob[..., None], out=np.zeros_like(moved), where=rest_prob[..., None] > 0)
    marg = discrete.univariate_marginal(model, j)
    mean_y = marg @ values
    var_y = marg @ values**2 - mean_y**2
    cond_mean = cond @ values
    var_cond_mean = np.sum(rest_prob * cond_mean**2) - mean_y**2

    flat = rng.choice(table.size, size=n, p=table.ravel())
    x = np.stack(np.unravel_index(flat, table.shape), axis=1)
    y = x[:, j].astype(float)
    rest_idx = tuple(np.delete(x, j, axis=1).T)
    cdf = np.cumsum(cond[rest_idx], axis=1)
    u = rng.random(n)[:, None]
    y_post = np.minimum((cdf < u * cdf[:, -1:]).sum(axis=1), values.size - 1).astype(float)
    y_uni = rng.choice(values.size, size=n, p=marg).astype(float)
    return _report(y, y_post, y_uni, 2 * (var_y - var_cond_mean), 2 * var_y)
