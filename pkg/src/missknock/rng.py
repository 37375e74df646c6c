"""Random streams and categorical draws.

All discrete samplers in the package draw through :func:`categorical`. When
they receive a :class:`ChoiceTape` instead of a numpy ``Generator`` the draw is
replayed from a recorded prefix, which lets :mod:`missknock.oracle` walk every
branch of a sampler and recover its exact output law.
"""

from __future__ import annotations

import numpy as np

_SETUP_KEY = 0
_TRIAL_KEY = 1


def make_rng(seed) -> np.random.Generator:
    """Counter-based generator from an int or a ``SeedSequence``."""
    if isinstance(seed, np.random.Generator):
        return seed
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(seed))


def setup_seed_sequence(master_seed: int) -> np.random.SeedSequence:
    """Stream used for once-per-experiment draws (support, coefficients)."""
    return np.random.SeedSequence(master_seed, spawn_key=(_SETUP_KEY,))


def trial_seed_sequence(master_seed: int, grid_index: int, replicate: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master_seed, spawn_key=(_TRIAL_KEY, grid_index, replicate))


def trial_seed(master_seed: int, grid_index: int, replicate: int) -> int:
    """64-bit fingerprint of a trial stream, recorded in result files."""
    state = trial_seed_sequence(master_seed, grid_index, replicate).generate_state(1, np.uint64)
    return int(state[0])


def trial_rng(master_seed: int, grid_index: int, replicate: int) -> np.random.Generator:
    return make_rng(trial_seed_sequence(master_seed, grid_index, replicate))


def spawn(rng, n: int) -> list:
    """Independent child streams; a tape hands out itself so replay stays sequential."""
    if isinstance(rng, ChoiceTape):
        return [rng] * n
    return rng.spawn(n)


def categorical(rng, probs) -> int:
    """Draw an index with probability proportional to ``probs``."""
    if isinstance(rng, ChoiceTape):
        return rng.choose(probs)
    probs = np.asarray(probs, dtype=float)
    cdf = np.cumsum(probs)
    total = cdf[-1]
    if not total > 0:
        raise ValueError("categorical draw from an all-zero weight vector")
    k = int(np.searchsorted(cdf, rng.random() * total, side="right"))
    # guard against landing on a trailing zero-weight entry through rounding
    nonzero = np.flatnonzero(probs > 0)
    if k > nonzero[-1]:
        k = int(nonzero[-1])
    while probs[k] <= 0:
        k += 1
    return k


def bernoulli(rng, p: float) -> bool:
    return categorical(rng, (1.0 - p, p)) == 1


class ChoiceTape:
    """Stand-in for a generator that replays a fixed prefix of choices.

    Past the prefix it takes the first outcome with positive probability. Every
    decision is logged as ``(probs, choice)`` so the caller can branch on the
    alternatives.
    """

    def __init__(self, prefix=()):
        self.prefix = list(prefix)
        self.log: list[tuple[np.ndarray, int]] = []

    def choose(self, probs) -> int:
        probs = np.asarray(probs, dtype=float)
        total = probs.sum()
        if not total > 0:
            raise ValueError("categorical draw from an all-zero weight vector")
        probs = probs / total
        depth = len(self.log)
        if depth < len(self.prefix):
            k = self.prefix[depth]
        else:
            k = int(np.flatnonzero(probs > 0)[0])
        self.log.append((probs, k))
        return k

    @property
    def weight(self) -> float:
        w = 1.0
        for probs, k in self.log:
            w *= probs[k]
        return w

    def spawn(self, n: int) -> list:
        return [self] * n
