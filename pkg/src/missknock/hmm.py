"""HMM machinery: forward recursion with missing entries, posterior path
sampling, emission imputation, Markov-chain knockoffs and the joint
impute-and-knockoff sampler.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ZeroEvidence
from .models import HmmModel, KnockoffPair, MaskedSample
from .rng import categorical


@dataclass(frozen=True)
class AlphaTable:
    """Forward quantities stored with per-step renormalization.

    Row ``t`` of ``scaled`` is ``alpha_t`` divided by its sum and
    ``log_scale[t]`` is the log of that sum, i.e. ``log P(X_{o(t)} = x_{o(t)})``
    where ``o(t)`` are the observed steps up to ``t``.
    """

    scaled: np.ndarray
    log_scale: np.ndarray

    @property
    def values(self) -> np.ndarray:
        """Unnormalized ``alpha_t(z) = P(Z_t = z, X_{o(t)} = x_{o(t)})`` (may underflow)."""
        return self.scaled * np.exp(self.log_scale)[:, None]

    @property
    def log_evidence(self) -> float:
        return float(self.log_scale[-1])


def forward_alpha(model: HmmModel, sample: MaskedSample) -> AlphaTable:
    T, K = model.length, model.num_states
    if sample.p != T:
        raise ValueError(f"sample has length {sample.p}, model has {T} steps")
    obs = ~sample.mask
    symbols = sample.values.astype(int)
    if np.any((symbols[obs] < 0) | (symbols[obs] >= model.num_symbols)):
        raise ValueError("observed symbol outside the emission support")
    scaled = np.empty((T, K))
    log_scale = np.empty(T)
    running = 0.0
    prev = None
    for t in range(T):
        a = model.initial.copy() if t == 0 else prev @ model.transition_at(t)
        if obs[t]:
            a = a * model.emission_at(t)[:, symbols[t]]
        c = a.sum()
        if not c > 0:
            raise ZeroEvidence(f"observed symbols are impossible under the model (step {t})")
        prev = scaled[t] = a / c
        running += np.log(c)
        log_scale[t] = running
    return AlphaTable(scaled, log_scale)


def backward_sample_posterior(model: HmmModel, alpha: AlphaTable, rng) -> np.ndarray:
    """Draw a latent path from ``P(Z | X_o)`` by sampling backwards from ``alpha``."""
    T = model.length
    z = np.empty(T, dtype=int)
    z[T - 1] = categorical(rng, alpha.scaled[T - 1])
    for t in range(T - 2, -1, -1):
        z[t] = categorical(rng, model.transition_at(t + 1)[:, z[t + 1]] * alpha.scaled[t])
    return z


def sample_latent_posterior(model: HmmModel, sample: MaskedSample, rng) -> np.ndarray:
    return backward_sample_posterior(model, forward_alpha(model, sample), rng)


def emit(model: HmmModel, path, steps, rng) -> np.ndarray:
    return np.array([categorical(rng, model.emission_at(t)[path[t]]) for t in steps], dtype=int)


def impute_emissions(model: HmmModel, path, m, rng) -> np.ndarray:
    """Independent emission draws at the steps in ``m`` given the latent path."""
    return emit(model, path, m, rng)


def sample_markov_knockoff(model: HmmModel, z, rng) -> np.ndarray:
    """Knockoff copy of a Markov chain path by sequential conditional independent pairs.

    Step ``j`` draws ``k`` with weight

        Q_j(k | z_{j-1}) Q_j(k | z'_{j-1}) Q_{j+1}(z_{j+1} | k) / N_{j-1}(k)

    where the first step uses the initial law once, the last step drops the
    forward factor, and ``N_j(k') = sum_l [prior_j(l) / N_{j-1}(l)] Q_{j+1}(k' | l)``
    carries the normalizers of earlier steps. Each ``N_j`` is rescaled to sum
    to one; the constant cancels in the next step's weights.
    """
    T, K = model.length, model.num_states
    z = np.asarray(z, dtype=int)
    out = np.empty(T, dtype=int)
    norm_prev = np.ones(K)
    for j in range(T):
        if j == 0:
            prior = model.initial
        else:
            q = model.transition_at(j)
            prior = q[z[j - 1]] * q[out[j - 1]]
        # prior(k) > 0 forces norm_prev(k) > 0, so 0/0 only occurs where prior vanishes
        prior = np.divide(prior, norm_prev, out=np.zeros(K), where=norm_prev > 0)
        if j < T - 1:
            q_next = model.transition_at(j + 1)
            weights = prior * q_next[:, z[j + 1]]
        else:
            weights = prior
        out[j] = categorical(rng, weights)
        if j < T - 1:
            norm = prior @ q_next
            norm_prev = norm / norm.sum()
    return out


def modified_sesia_knockoffs(model: HmmModel, sample: MaskedSample, rng) -> KnockoffPair:
    """Impute the missing steps and draw knockoffs from a single latent posterior draw.

    1. ``z_hat ~ P(Z | X_o = x_o)``
    2. ``x_hat_m ~ P(X_m | Z = z_hat)``
    3. ``z' ~`` Markov-chain knockoff of ``z_hat``
    4. ``x_tilde ~ P(X | Z = z')`` at every step
    """
    T = model.length
    z_hat = sample_latent_posterior(model, sample, rng)
    x_hat = sample.values.astype(int).copy()
    m = sample.missing
    x_hat[m] = impute_emissions(model, z_hat, m, rng)
    z_prime = sample_markov_knockoff(model, z_hat, rng)
    x_tilde = np.empty(T, dtype=int)
    x_tilde[m] = emit(model, z_prime, m, rng)
    o = sample.observed
    x_tilde[o] = emit(model, z_prime, o, rng)
    return KnockoffPair(x_hat, x_tilde, sample.mask)


def sesia_knockoff(model: HmmModel, x, rng) -> np.ndarray:
    """Knockoff sampler for a fully observed HMM row."""
    sample = MaskedSample(np.asarray(x, dtype=int), np.zeros(model.length, dtype=bool))
    return modified_sesia_knockoffs(model, sample, rng).knockoff


def impute_posterior(model: HmmModel, sample: MaskedSample, rng) -> np.ndarray:
    """Draw ``X_m`` from ``P(X_m | X_o)`` through a latent posterior draw."""
    x = sample.values.astype(int).copy()
    m = sample.missing
    if m.size == 0:
        return x
    z_hat = sample_latent_posterior(model, sample, rng)
    x[m] = impute_emissions(model, z_hat, m, rng)
    return x


def latent_marginals(model: HmmModel) -> np.ndarray:
    """``T x K`` table of ``P(Z_t = z)``."""
    out = np.empty((model.length, model.num_states))
    out[0] = model.initial
    for t in range(1, model.length):
        out[t] = out[t - 1] @ model.transition_at(t)
    return out


def hmm_univariate_marginal(model: HmmModel, t: int) -> np.ndarray:
    if not 0 <= t < model.length:
        raise IndexError("step out of range")
    return latent_marginals(model)[t] @ model.emission_at(t)
