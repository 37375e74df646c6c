"""Exact machinery for arbitrary joint tables over small product spaces."""

from __future__ import annotations

import numpy as np

from .errors import ZeroEvidence
from .models import DiscreteModel, MaskedSample
from .rng import categorical


def _observed_index(sample: MaskedSample) -> tuple:
    return tuple(slice(None) if sample.mask[j] else int(sample.values[j]) for j in range(sample.p))


def conditional_table(model: DiscreteModel, sample: MaskedSample) -> np.ndarray:
    """``P(X_m = . | X_o = x_o)`` with one axis per missing coordinate (ascending)."""
    sub = model.table[_observed_index(sample)]
    total = sub.sum()
    if not total > 0:
        raise ZeroEvidence("observed values have probability zero")
    return sub / total


def impute_posterior(model: DiscreteModel, sample: MaskedSample, rng) -> np.ndarray:
    x = sample.values.astype(int).copy()
    m = sample.missing
    if m.size == 0:
        return x
    cond = conditional_table(model, sample)
    flat = categorical(rng, cond.ravel())
    x[m] = np.unravel_index(flat, cond.shape)
    return x


def univariate_marginal(model: DiscreteModel, j: int) -> np.ndarray:
    axes = tuple(i for i in range(model.p) if i != j)
    return model.table.sum(axis=axes)


class ScipKnockoffSampler:
    """Sequential conditional independent pairs on an explicit joint table.

    ``X_tilde_j`` is drawn from the law of ``X_j`` given ``X_{-j}`` and the
    knockoffs already drawn, under the joint law of ``(X, X_tilde_{<j})`` that
    the previous steps induce. The conditional tables are precomputed, so the
    sampler is exact but only practical for a handful of coordinates.
    """

    def __init__(self, model: DiscreteModel):
        self.model = model
        p = model.p
        joint = np.array(model.table)
        self._conditionals = []
        for j in range(p):
            denom = joint.sum(axis=j, keepdims=True)
            normalized = np.divide(joint, denom, out=np.zeros_like(joint), where=denom > 0)
            cond = np.moveaxis(normalized, j, -1)  # axes: x_{-j}, x_tilde_{<j}, value
            self._conditionals.append(cond)
            joint = joint[..., None] * np.expand_dims(cond, axis=j)

    @property
    def p(self) -> int:
        return self.model.p

    def __call__(self, x, rng) -> np.ndarray:
        x = [int(v) for v in x]
        if len(x) != self.p:
            raise ValueError("x has the wrong dimension for this sampler")
        tilde: list[int] = []
        for j, cond in enumerate(self._conditionals):
            key = tuple(x[:j] + x[j + 1:] + tilde)
            tilde.append(categorical(rng, cond[key]))
        return np.array(tilde, dtype=int)
