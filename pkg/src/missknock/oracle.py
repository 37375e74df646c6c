"""Exact laws of small discrete samplers and brute-force checks against them.

:func:`enumerate_pipeline_joint` runs a sampler once per branch of its random
choices (see :class:`missknock.rng.ChoiceTape`) and sums path probabilities
per output, giving the sampler's exact output law. The remaining helpers
compare such laws: total variation, swap invariance, preservation of the
covariate law, and Markov blankets by exhaustive subset search.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations, product

import numpy as np

from .errors import NotStrictlyPositive, SupportMismatch, SupportTooLarge
from .models import DiscreteModel, HmmModel, KnockoffPair, LatentFactorModel, MaskedSample
from .rng import ChoiceTape

MAX_PATHS = 10**6


@dataclass(frozen=True)
class JointTable:
    """Finite law as a mapping from outcome tuples to probabilities."""

    probs: dict

    def __post_init__(self):
        total = sum(self.probs.values())
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {total!r}, not 1")
        if any(v < 0 for v in self.probs.values()):
            raise ValueError("negative probability")

    @property
    def support(self) -> list:
        return list(self.probs)

    @property
    def probabilities(self) -> np.ndarray:
        return np.array(list(self.probs.values()))

    def __getitem__(self, outcome) -> float:
        return self.probs.get(outcome, 0.0)

    def map(self, fn) -> "JointTable":
        """Law of ``fn(outcome)``."""
        out: dict = {}
        for k, v in self.probs.items():
            key = fn(k)
            out[key] = out.get(key, 0.0) + v
        return JointTable(out)


def freeze(obj):
    """Hashable, comparable form of a sampler output."""
    if isinstance(obj, KnockoffPair):
        return (freeze(obj.imputed), freeze(obj.knockoff))
    if isinstance(obj, np.ndarray):
        return tuple(v.item() for v in obj.ravel())
    if isinstance(obj, (tuple, list)):
        return tuple(freeze(v) for v in obj)
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def enumerate_pipeline_joint(sampler, *args, max_paths: int = MAX_PATHS, **kwargs) -> JointTable:
    """Exact output law of ``sampler(*args, rng, **kwargs)``.

    The sampler must draw all of its randomness through
    :func:`missknock.rng.categorical` (or :func:`~missknock.rng.bernoulli`).
    """
    table: dict = {}
    stack = [[]]
    paths = 0
    while stack:
        prefix = stack.pop()
        tape = ChoiceTape(prefix)
        out = freeze(sampler(*args, tape, **kwargs))
        paths += 1
        if paths > max_paths:
            raise SupportTooLarge(f"more than {max_paths} random paths")
        table[out] = table.get(out, 0.0) + tape.weight
        choices = [k for _, k in tape.log]
        for depth in range(len(prefix), len(tape.log)):
            probs, chosen = tape.log[depth]
            for alt in np.flatnonzero(probs > 0):
                if alt > chosen:
                    stack.append(choices[:depth] + [int(alt)])
    return JointTable(table)


def total_variation(a: JointTable, b: JointTable) -> float:
    keys = set(a.probs) | set(b.probs)
    return 0.5 * sum(abs(a[k] - b[k]) for k in keys)


def _swap_pair(outcome, S):
    x, xt = list(outcome[0]), list(outcome[1])
    for j in S:
        x[j], xt[j] = xt[j], x[j]
    return (tuple(x), tuple(xt))


def swap_profile(joint: JointTable, p: int) -> dict:
    """TV between the law of ``(X, X_tilde)`` and its swapped law, per swap set."""
    out = {}
    for size in range(p + 1):
        for S in combinations(range(p), size):
            out[S] = total_variation(joint, joint.map(lambda o, S=S: _swap_pair(o, S)))
    return out


def check_pairwise_exchangeable(joint: JointTable, p: int) -> float:
    """Largest TV distance between the pair law and any of its swaps."""
    return max(swap_profile(joint, p).values())


def check_distribution_preserved(law_x: JointTable, law_x_hat: JointTable) -> float:
    lengths = {len(k) for k in law_x.probs} | {len(k) for k in law_x_hat.probs}
    if len(lengths) > 1:
        raise SupportMismatch(f"outcomes of different lengths: {sorted(lengths)}")
    return total_variation(law_x, law_x_hat)


# ---------------------------------------------------------------------------
# exact laws of models and of the full missing-data process


def model_law(model) -> JointTable:
    """Law of ``X`` computed by brute-force summation over latent variables."""
    if isinstance(model, DiscreteModel):
        table = model.table
    elif isinstance(model, LatentFactorModel):
        table = model.joint_table()
    elif isinstance(model, HmmModel):
        table = hmm_joint_table(model)[1]
    else:
        raise TypeError(f"no exact law for {type(model).__name__}")
    return JointTable({idx: float(v) for idx, v in np.ndenumerate(table) if v > 0})


def hmm_joint_table(model: HmmModel) -> tuple[np.ndarray, np.ndarray]:
    """Tables of ``P(Z = z, X = x)`` (axes ``z..., x...``) and ``P(X = x)``, by path enumeration."""
    T, K, M = model.length, model.num_states, model.num_symbols
    joint = np.zeros((K,) * T + (M,) * T)
    for z in product(range(K), repeat=T):
        pz = model.initial[z[0]]
        for t in range(1, T):
            pz *= model.transition_at(t)[z[t - 1], z[t]]
        if pz == 0:
            continue
        for x in product(range(M), repeat=T):
            px = pz
            for t in range(T):
                px *= model.emission_at(t)[z[t], x[t]]
            joint[z + x] = px
    return joint, joint.sum(axis=tuple(range(T)))


def mcar_mask_law(missing_probs) -> JointTable:
    """Independent coordinate-wise missingness with the given probabilities."""
    missing_probs = list(missing_probs)
    out = {}
    for bits in product((False, True), repeat=len(missing_probs)):
        pr = 1.0
        for b, q in zip(bits, missing_probs):
            pr *= q if b else 1.0 - q
        if pr > 0:
            out[bits] = out.get(bits, 0.0) + pr
    return JointTable(out)


def mar_mask_law(x, driver: int, missing_probs_by_value) -> JointTable:
    """Missingness that depends only on the always-observed coordinate ``driver``.

    ``missing_probs_by_value[v][j]`` is the probability that coordinate ``j``
    is missing when ``x[driver] == v``.
    """
    probs = list(missing_probs_by_value[x[driver]])
    probs[driver] = 0.0
    return mcar_mask_law(probs)


def missing_data_law(law_x: JointTable, mask_law, algorithm, then=None, max_paths: int = MAX_PATHS) -> JointTable:
    """Exact law of ``algorithm(masked X, rng)`` when ``X ~ law_x`` and ``R ~ mask_law(x)``.

    The algorithm only ever sees the masked row. Its output law is enumerated
    once per distinct (observed values, mask) pair. With ``then`` given, the
    outcome is the pair ``(a, b)`` with ``b ~ then(a, rng)``; the second stage
    is enumerated once per distinct ``a``, which is much cheaper than
    enumerating the two stages as one sampler.
    """
    cache: dict = {}
    second: dict = {}
    out: dict = {}
    for x, px in law_x.probs.items():
        for mask, pr in mask_law(x).probs.items():
            masked = tuple(-1 if b else v for v, b in zip(x, mask))
            key = (masked, mask)
            law = cache.get(key)
            if law is None:
                sample = MaskedSample(np.array(masked, dtype=int), np.array(mask, dtype=bool))
                law = enumerate_pipeline_joint(algorithm, sample, max_paths=max_paths)
                if then is not None:
                    law = chain(law, then, second, max_paths)
                cache[key] = law
            for outcome, pa in law.probs.items():
                out[outcome] = out.get(outcome, 0.0) + px * pr * pa
    return JointTable(out)


def chain(law: JointTable, kernel, cache: dict | None = None, max_paths: int = MAX_PATHS) -> JointTable:
    """Law of ``(a, b)`` with ``a ~ law`` and ``b ~ kernel(array(a), rng)``."""
    cache = {} if cache is None else cache
    out: dict = {}
    for a, pa in law.probs.items():
        inner = cache.get(a)
        if inner is None:
            inner = cache[a] = enumerate_pipeline_joint(kernel, np.array(a), max_paths=max_paths)
        for b, pb in inner.probs.items():
            out[(a, b)] = out.get((a, b), 0.0) + pa * pb
    return JointTable(out)


# ---------------------------------------------------------------------------
# Markov blankets on strictly positive tables


def _as_array(joint) -> np.ndarray:
    if isinstance(joint, JointTable):
        keys = np.array(joint.support)
        shape = tuple(keys.max(axis=0) + 1)
        table = np.zeros(shape)
        for k, v in joint.probs.items():
            table[k] = v
        return table
    return np.asarray(joint, dtype=float)


def _conditional_on(table: np.ndarray, keep) -> np.ndarray:
    """``P(y | x_keep)`` broadcast back to the full ``(x, y)`` table shape."""
    p = table.ndim - 1
    drop = tuple(i for i in range(p) if i not in keep)
    marg = table.sum(axis=drop, keepdims=True) if drop else table
    return marg / marg.sum(axis=-1, keepdims=True)


def conditional_independence_gap(table: np.ndarray, given) -> float:
    """``max |P(y | x) - P(y | x_given)|``; zero iff ``Y`` is independent of the rest given ``X_given``."""
    full = _conditional_on(table, tuple(range(table.ndim - 1)))
    return float(np.max(np.abs(full - _conditional_on(table, tuple(given)))))


def _check_positive(table: np.ndarray) -> None:
    if np.any(table <= 0):
        raise NotStrictlyPositive("the joint table has non-positive entries")


def markov_blanket_bruteforce(joint, tol: float = 1e-9) -> tuple:
    """Smallest ``M`` with ``Y`` independent of ``X_{M'}`` given ``X_M``.

    The last axis (or last outcome coordinate) of ``joint`` is ``Y``.
    """
    table = _as_array(joint)
    _check_positive(table)
    p = table.ndim - 1
    for size in range(p + 1):
        for M in combinations(range(p), size):
            if conditional_independence_gap(table, M) <= tol:
                return M
    raise AssertionError("the full set always qualifies")


def pairwise_dependence_set(joint, tol: float = 1e-9) -> tuple:
    """Indices ``i`` with ``Y`` dependent on ``X_i`` given ``X_{-i}``."""
    table = _as_array(joint)
    _check_positive(table)
    p = table.ndim - 1
    out = []
    for i in range(p):
        rest = tuple(j for j in range(p) if j != i)
        if conditional_independence_gap(table, rest) > tol:
            out.append(i)
    return tuple(out)


def random_positive_joint(rng, p: int, blanket=None) -> np.ndarray:
    """Strictly positive binary table over ``(X_1..X_p, Y)``.

    Entries are normalized ``0.05 + Uniform(0, 1)`` draws. With ``blanket``
    given, ``P(Y | X)`` depends on ``X_blanket`` only.
    """
    shape = (2,) * (p + 1)
    if blanket is None:
        table = 0.05 + rng.random(shape)
        return table / table.sum()
    px = 0.05 + rng.random((2,) * p)
    px /= px.sum()
    blanket = tuple(blanket)
    cond = 0.05 + rng.random((2,) * len(blanket) + (2,))
    cond /= cond.sum(axis=-1, keepdims=True)
    table = np.empty(shape)
    for x in product((0, 1), repeat=p):
        table[x] = px[x] * cond[tuple(x[i] for i in blanket)]
    return table
