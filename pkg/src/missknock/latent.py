"""Joint imputation and knockoff sampling for conditionally independent latent
factor models.

The sampler draws one latent configuration from the posterior given the
observed coordinates, imputes the missing coordinates from it, then resamples
the latent vector one coordinate at a time, in order ``0, ..., L-1``. Coordinate
``i`` is drawn from ``P(Z_i | X = x_hat, Z_{>i} = z_hat_{>i}, Z_{<i} = z'_{<i})``,
so that after the last step ``(X_hat, Z')`` has the law of ``(X, Z)``. The
knockoff is finally emitted from ``Z'`` independently per coordinate, which
makes ``X_hat`` and ``X_tilde`` conditionally i.i.d. given ``Z'``. All
conditionals are computed by brute-force enumeration of the latent support.
"""

from __future__ import annotations

import numpy as np

from .errors import ZeroEvidence
from .models import KnockoffPair, LatentFactorModel, MaskedSample
from .rng import categorical


def latent_posterior(model: LatentFactorModel, sample: MaskedSample) -> np.ndarray:
    """Table of ``P(Z = z | X_o = x_o)`` over the latent support."""
    post = model.latent_joint * model.likelihood(sample.values, sample.observed)
    total = post.sum()
    if not total > 0:
        raise ZeroEvidence("observed values have probability zero")
    return post / total


def _draw_latent(table: np.ndarray, rng) -> tuple:
    flat = categorical(rng, table.ravel())
    return tuple(int(v) for v in np.unravel_index(flat, table.shape))


def _emit(model: LatentFactorModel, z: tuple, coords, rng) -> list[int]:
    return [categorical(rng, model.emissions[i][z]) for i in coords]


def impute_posterior(model: LatentFactorModel, sample: MaskedSample, rng) -> np.ndarray:
    x = sample.values.astype(int).copy()
    m = sample.missing
    if m.size:
        z_hat = _draw_latent(latent_posterior(model, sample), rng)
        x[m] = _emit(model, z_hat, m, rng)
    return x


def resample_latent(model: LatentFactorModel, x, z_hat: tuple, rng, steps: int | None = None) -> tuple:
    """Coordinate-wise resampling of the latent vector given a complete ``x``.

    ``steps`` stops after the first ``steps`` coordinates (all by default).
    """
    weights_all = model.latent_joint * model.likelihood(x, range(model.p))
    z = list(z_hat)
    for i in range(len(z) if steps is None else steps):
        index = tuple(slice(None) if k == i else z[k] for k in range(len(z)))
        z[i] = categorical(rng, weights_all[index])
    return tuple(z)


def gz_knockoffs(model: LatentFactorModel, sample: MaskedSample, rng) -> KnockoffPair:
    post = latent_posterior(model, sample)
    z_hat = _draw_latent(post, rng)
    x_hat = sample.values.astype(int).copy()
    m = sample.missing
    x_hat[m] = _emit(model, z_hat, m, rng)
    z_prime = resample_latent(model, x_hat, z_hat, rng)
    x_tilde = np.array(_emit(model, z_prime, range(model.p), rng), dtype=int)
    return KnockoffPair(x_hat, x_tilde, sample.mask)


def gz_knockoff(model: LatentFactorModel, x, rng) -> np.ndarray:
    """Knockoff sampler for a fully observed row."""
    sample = MaskedSample(np.asarray(x, dtype=int), np.zeros(model.p, dtype=bool))
    return gz_knockoffs(model, sample, rng).knockoff


def univariate_marginal(model: LatentFactorModel, j: int) -> np.ndarray:
    axes = tuple(range(model.latent_joint.ndim))
    return np.tensordot(model.latent_joint, model.emissions[j], axes=(axes, axes))
