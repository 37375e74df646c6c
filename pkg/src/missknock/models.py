"""Probability models, data generators and the swap operator.

Indices are 0-based throughout the package. Missing entries are marked by a
boolean mask; the value arrays additionally carry a sentinel (``NaN`` for real
data, :data:`MISSING_CODE` for categorical data) but the mask is authoritative.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import expit

from .rng import ChoiceTape, bernoulli

MISSING_CODE = -1
MASK_MODES = ("true-features", "null-features", "all")

_STOCHASTIC_TOL = 1e-12


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


def _check_stochastic(table: np.ndarray, name: str) -> None:
    if np.any(table < 0):
        raise ValueError(f"{name} has negative entries")
    sums = table.sum(axis=-1)
    if np.max(np.abs(sums - 1.0)) > _STOCHASTIC_TOL:
        raise ValueError(f"{name} rows must sum to 1")


@dataclass(frozen=True)
class MvnModel:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = _frozen(self.mean)
        cov = _frozen(self.covariance)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ValueError("covariance must be p x p for a length-p mean")
        if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-12:
            raise ValueError("covariance is not symmetric")
        if np.linalg.eigvalsh(cov)[0] < -1e-10:
            raise ValueError("covariance is not positive semidefinite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def p(self) -> int:
        return self.mean.size

    @cached_property
    def cholesky(self) -> np.ndarray:
        return np.linalg.cholesky(self.covariance)

    def sample(self, n: int, rng) -> np.ndarray:
        """``n`` i.i.d. rows from the model."""
        z = rng.standard_normal((n, self.p))
        return self.mean + z @ self.cholesky.T

    def restrict(self, idx) -> "MvnModel":
        idx = np.asarray(idx, dtype=int)
        return MvnModel(self.mean[idx], self.covariance[np.ix_(idx, idx)])


@dataclass(frozen=True)
class HmmModel:
    """Discrete HMM with ``K`` hidden states and ``K'`` emitted symbols.

    ``transition`` is either one shared ``K x K`` table or a ``(T-1, K, K)``
    stack where ``transition[t-1]`` moves from step ``t-1`` to step ``t``.
    ``emission`` is either ``K x K'`` or ``(T, K, K')``. Rows are indexed by
    the conditioning state.
    """

    initial: np.ndarray
    transition: np.ndarray
    emission: np.ndarray
    length: int

    def __post_init__(self):
        initial = _frozen(self.initial)
        transition = _frozen(self.transition)
        emission = _frozen(self.emission)
        if self.length < 1:
            raise ValueError("length must be positive")
        k = initial.size
        if transition.shape not in ((k, k), (self.length - 1, k, k)):
            raise ValueError(f"transition shape {transition.shape} does not match K={k}")
        if emission.ndim == 2:
            ok = emission.shape[0] == k
        else:
            ok = emission.ndim == 3 and emission.shape[:2] == (self.length, k)
        if not ok:
            raise ValueError(f"emission shape {emission.shape} does not match K={k}")
        if np.any(initial < 0) or abs(initial.sum() - 1.0) > _STOCHASTIC_TOL:
            raise ValueError("initial distribution must be a probability vector")
        _check_stochastic(transition, "transition")
        _check_stochastic(emission, "emission")
        object.__setattr__(self, "initial", initial)
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "emission", emission)

    @property
    def num_states(self) -> int:
        return self.initial.size

    @property
    def num_symbols(self) -> int:
        return self.emission.shape[-1]

    def transition_at(self, t: int) -> np.ndarray:
        """Table for the move from step ``t-1`` into step ``t`` (``t >= 1``)."""
        if self.transition.ndim == 2:
            return self.transition
        return self.transition[t - 1]

    def emission_at(self, t: int) -> np.ndarray:
        if self.emission.ndim == 2:
            return self.emission
        return self.emission[t]

    def sample(self, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
        """``n`` i.i.d. (latent, observed) sequence pairs, each ``n x T``."""
        T, K = self.length, self.num_states
        z = np.empty((n, T), dtype=int)
        x = np.empty((n, T), dtype=int)
        z[:, 0] = _inverse_cdf(np.broadcast_to(self.initial, (n, K)), rng.random(n))
        for t in range(T):
            if t > 0:
                z[:, t] = _inverse_cdf(self.transition_at(t)[z[:, t - 1]], rng.random(n))
            x[:, t] = _inverse_cdf(self.emission_at(t)[z[:, t]], rng.random(n))
        return z, x


def _inverse_cdf(rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(rows, axis=1)
    k = (cdf < (u * cdf[:, -1])[:, None]).sum(axis=1)
    return np.minimum(k, rows.shape[1] - 1)


@dataclass(frozen=True)
class LatentFactorModel:
    """Finite latent vector ``Z`` with conditionally independent emissions.

    ``latent_joint`` has one axis per latent coordinate. ``emissions[i]`` has
    shape ``latent_joint.shape + (k_i,)`` and holds ``P(X_i | Z)``. Because the
    emission law is stored per coordinate, ``P(X | Z)`` factorizes by
    construction.
    """

    latent_joint: np.ndarray
    emissions: tuple

    def __post_init__(self):
        joint = _frozen(self.latent_joint)
        if np.any(joint < 0) or abs(joint.sum() - 1.0) > _STOCHASTIC_TOL:
            raise ValueError("latent_joint must be a probability table")
        emissions = []
        for i, e in enumerate(self.emissions):
            e = _frozen(e)
            if e.shape[:-1] != joint.shape:
                raise ValueError(f"emission {i} must have shape {joint.shape} + (k_{i},)")
            _check_stochastic(e, f"emission {i}")
            emissions.append(e)
        object.__setattr__(self, "latent_joint", joint)
        object.__setattr__(self, "emissions", tuple(emissions))

    @property
    def p(self) -> int:
        return len(self.emissions)

    @property
    def latent_shape(self) -> tuple:
        return self.latent_joint.shape

    @property
    def num_symbols(self) -> tuple:
        return tuple(e.shape[-1] for e in self.emissions)

    def likelihood(self, x, coords) -> np.ndarray:
        """Table over the latent support of ``prod_{i in coords} P(x_i | z)``."""
        out = np.ones(self.latent_shape)
        for i in coords:
            out = out * self.emissions[i][..., int(x[i])]
        return out

    def joint_table(self) -> np.ndarray:
        """Full table of ``P(X = x)`` with one axis per observed coordinate."""
        table = np.zeros(self.num_symbols)
        for x in np.ndindex(*self.num_symbols):
            table[x] = np.sum(self.latent_joint * self.likelihood(x, range(self.p)))
        return table


@dataclass(frozen=True)
class DiscreteModel:
    """Arbitrary joint law over a finite product space, stored as a dense table."""

    table: np.ndarray

    def __post_init__(self):
        table = _frozen(self.table)
        if np.any(table < 0) or abs(table.sum() - 1.0) > _STOCHASTIC_TOL:
            raise ValueError("table must be a probability table")
        object.__setattr__(self, "table", table)

    @property
    def p(self) -> int:
        return self.table.ndim

    @property
    def num_symbols(self) -> tuple:
        return self.table.shape

    def marginal(self, idx) -> "DiscreteModel":
        keep = sorted(int(i) for i in idx)
        drop = tuple(i for i in range(self.p) if i not in keep)
        return DiscreteModel(self.table.sum(axis=drop))


@dataclass(frozen=True)
class MaskedSample:
    """One row with its missingness indicator (``True`` = missing)."""

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        values = np.array(self.values)
        mask = _frozen(self.mask, dtype=bool)
        if values.shape != mask.shape or values.ndim != 1:
            raise ValueError("values and mask must be vectors of equal length")
        if np.issubdtype(values.dtype, np.floating):
            sentinel = np.isnan(values)
        else:
            sentinel = values == MISSING_CODE
        if not np.array_equal(sentinel, mask):
            raise ValueError("sentinel must appear exactly at the masked positions")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def from_complete(cls, x, mask) -> "MaskedSample":
        """Hide the masked coordinates of a fully observed row."""
        x = np.array(x)
        mask = np.asarray(mask, dtype=bool)
        if np.issubdtype(x.dtype, np.floating):
            x = x.astype(float)
            x[mask] = np.nan
        else:
            x = x.astype(int)
            x[mask] = MISSING_CODE
        return cls(x, mask)

    @property
    def p(self) -> int:
        return self.mask.size

    @property
    def missing(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    @property
    def observed(self) -> np.ndarray:
        return np.flatnonzero(~self.mask)

    @property
    def observed_values(self) -> np.ndarray:
        return self.values[~self.mask]


@dataclass(frozen=True)
class KnockoffPair:
    """Completed row and its knockoff; ``imputed`` agrees with the input on observed entries."""

    imputed: np.ndarray
    knockoff: np.ndarray
    mask: np.ndarray


@dataclass(frozen=True)
class ResponseModel:
    coefficients: np.ndarray
    amplitude: float
    support: tuple

    @classmethod
    def from_support(cls, p: int, support, amplitude: float) -> "ResponseModel":
        support = tuple(sorted(int(j) for j in support))
        if any(j < 0 or j >= p for j in support):
            raise ValueError("support index out of range")
        beta = np.zeros(p)
        beta[list(support)] = amplitude
        return cls(_frozen(beta), float(amplitude), support)

    @property
    def p(self) -> int:
        return self.coefficients.size


@dataclass(frozen=True)
class MissingnessSpec:
    p0: float
    candidate_set_mode: str = "all"

    def __post_init__(self):
        if not 0.0 <= self.p0 <= 1.0:
            raise ValueError("p0 must lie in [0, 1]")
        if self.candidate_set_mode not in MASK_MODES:
            raise ValueError(f"candidate_set_mode must be one of {MASK_MODES}")

    def candidates(self, p: int, support) -> np.ndarray:
        """Boolean indicator of the coordinates allowed to go missing."""
        in_support = np.zeros(p, dtype=bool)
        in_support[list(support)] = True
        if self.candidate_set_mode == "true-features":
            return in_support
        if self.candidate_set_mode == "null-features":
            return ~in_support
        return np.ones(p, dtype=bool)


def make_ar1_covariance(p: int, rho: float) -> np.ndarray:
    if p < 1:
        raise ValueError("p must be at least 1")
    if not 0.0 <= rho < 1.0:
        raise ValueError("rho must lie in [0, 1)")
    idx = np.arange(p)
    return rho ** np.abs(idx[:, None] - idx[None, :]).astype(float)


def make_paper_hmm(T: int) -> HmmModel:
    """Nine-state cyclic HMM used for the HMM simulations.

    The chain starts in state 1 with certainty, stays with probability 0.9 and
    otherwise advances to the next state (mod 9). Each state emits its own
    symbol or the next one with probability 0.175 each, and the remaining seven
    symbols with probability 0.65/7.
    """
    K = 9
    initial = np.zeros(K)
    initial[1] = 1.0
    transition = np.zeros((K, K))
    emission = np.full((K, K), 0.65 / 7)
    for y in range(K):
        transition[y, y] = 0.9
        transition[y, (y + 1) % K] = 0.1
        emission[y, y] = 0.35 / 2
        emission[y, (y + 1) % K] = 0.35 / 2
    return HmmModel(initial, transition, emission, T)


def response_probability(x, model: ResponseModel, shift: float = 0.0):
    """``P(Y = 1 | x)``; ``x`` may be a single row or an ``n x p`` matrix."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.p:
        raise ValueError("covariate dimension does not match the coefficients")
    return expit((x - shift) @ model.coefficients)


def simulate_response(x, model: ResponseModel, rng, shift: float = 0.0):
    """Bernoulli labels with success probability ``sigmoid((x - shift) . beta)``."""
    prob = response_probability(x, model, shift)
    if np.ndim(prob) == 0:
        return int(bernoulli(rng, float(prob)))
    return (rng.random(prob.shape) < prob).astype(int)


def generate_mcar_mask(p: int, spec: MissingnessSpec, support, rng) -> np.ndarray:
    """Mask for one row: each candidate coordinate is missing with probability ``p0``.

    Coordinates outside the candidate set are always observed. The covariates
    are never consulted.
    """
    candidates = spec.candidates(p, support)
    if isinstance(rng, ChoiceTape):
        mask = np.zeros(p, dtype=bool)
        for j in np.flatnonzero(candidates):
            mask[j] = bernoulli(rng, spec.p0)
        return mask
    return candidates & (rng.random(p) < spec.p0)


def generate_mcar_masks(n: int, p: int, spec: MissingnessSpec, support, rng) -> np.ndarray:
    candidates = spec.candidates(p, support)
    return candidates[None, :] & (rng.random((n, p)) < spec.p0)


def swap(x, x_tilde, S):
    """Exchange the coordinates in ``S`` between ``x`` and ``x_tilde``.

    Works on vectors or on matrices (columns are swapped).
    """
    x = np.asarray(x)
    x_tilde = np.asarray(x_tilde)
    if x.shape != x_tilde.shape:
        raise ValueError("swap needs arrays of equal shape")
    idx = np.asarray(sorted(set(int(j) for j in S)), dtype=int)
    p = x.shape[-1]
    if idx.size and (idx[0] < 0 or idx[-1] >= p):
        raise IndexError("swap index out of range")
    a, b = x.copy(), x_tilde.copy()
    a[..., idx] = x_tilde[..., idx]
    b[..., idx] = x[..., idx]
    return a, b


def random_hmm(rng, T: int, K: int, K_emit: int, concentration: float = 1.0) -> HmmModel:
    """Dirichlet-random HMM with shared tables, used by tests and verification."""
    alpha = np.full(K, concentration)
    initial = rng.dirichlet(alpha)
    transition = rng.dirichlet(alpha, size=K)
    emission = rng.dirichlet(np.full(K_emit, concentration), size=K)
    return HmmModel(initial, transition, emission, T)


def random_discrete_model(rng, num_symbols, floor: float = 0.0) -> DiscreteModel:
    table = rng.random(tuple(num_symbols)) + floor
    return DiscreteModel(table / table.sum())


def random_latent_model(rng, latent_shape, num_symbols) -> LatentFactorModel:
    joint = rng.random(tuple(latent_shape))
    emissions = []
    for k in num_symbols:
        e = rng.random(tuple(latent_shape) + (k,))
        emissions.append(e / e.sum(axis=-1, keepdims=True))
    return LatentFactorModel(joint / joint.sum(), tuple(emissions))


def random_mvn_model(rng, p: int) -> MvnModel:
    """Random positive definite covariance with a random mean."""
    a = rng.standard_normal((p, p))
    cov = a @ a.T / p + 0.2 * np.eye(p)
    return MvnModel(rng.standard_normal(p), (cov + cov.T) / 2)
