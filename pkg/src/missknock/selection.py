"""Knockoff filter: L1-penalized logistic scorer, cross-validated penalty,
W statistics and the knockoff+ threshold.

The solver minimizes

    sum_i log(1 + exp(eta_i)) - y_i eta_i + lam * ||beta||_1,   eta = X beta + b0

with an unpenalized intercept. Each outer sweep builds the quadratic model of
the logistic loss at the current point, minimizes model plus penalty by cyclic
coordinate descent, and moves along the resulting direction with an Armijo
backtracking search, so the objective never increases between sweeps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy.stats import rankdata

from .errors import FoldConstructionError, NonFiniteInput, SingleClassLabels

LAMBDA_GRID = (1e-10, 1e-2, 1e-1, 1.0, 1e1)
MAX_SWEEPS = 10_000
TOL = 1e-7

_INNER_MAX = 10
_INNER_TOL = 1e-9
_ARMIJO = 1e-4


@numba.njit(cache=True, fastmath=True)
def _loss(eta, y):
    total = 0.0
    for i in range(eta.size):
        e = eta[i]
        if e > 0:
            total += e + np.log1p(np.exp(-e)) - y[i] * e
        else:
            total += np.log1p(np.exp(e)) - y[i] * e
    return total


@numba.njit(cache=True, fastmath=True)
def _l1(beta):
    s = 0.0
    for j in range(beta.size):
        s += abs(beta[j])
    return s


@numba.njit(cache=True, fastmath=True)
def _solve(XT, y, lam, beta, b0, max_sweeps, tol, trace):
    d, n = XT.shape
    eta = np.empty(n)
    for i in range(n):
        eta[i] = b0
    for j in range(d):
        if beta[j] != 0.0:
            for i in range(n):
                eta[i] += XT[j, i] * beta[j]
    f = _loss(eta, y) + lam * _l1(beta)
    trace[0] = f
    n_trace = 1
    converged = False
    degenerate = False
    resid = np.empty(n)
    w = np.empty(n)
    r = np.empty(n)
    h = np.empty(d)
    new_beta = beta.copy()
    delta_eta = np.empty(n)
    cand_eta = np.empty(n)
    for sweep in range(max_sweeps):
        sum_w = 0.0
        for i in range(n):
            e = eta[i]
            if e > 0:
                q = np.exp(-e)
                prob = 1.0 / (1.0 + q)
                w[i] = q / (1.0 + q) ** 2
                resid[i] = y[i] - prob if y[i] == 0 else q / (1.0 + q)
            else:
                q = np.exp(e)
                prob = q / (1.0 + q)
                w[i] = q / (1.0 + q) ** 2
                resid[i] = y[i] - prob
            sum_w += w[i]
            r[i] = resid[i]
        degenerate = sum_w <= 0.0
        for j in range(d):
            s = 0.0
            for i in range(n):
                s += w[i] * XT[j, i] * XT[j, i]
            h[j] = s
            if s <= 0.0:
                degenerate = True
            new_beta[j] = beta[j]
        new_b0 = b0
        # cyclic coordinate descent on the penalized quadratic model;
        # r_i holds (y_i - p_i) - w_i * (change in eta_i)
        for inner in range(_INNER_MAX):
            max_change = 0.0
            if sum_w > 0.0:
                s = 0.0
                for i in range(n):
                    s += r[i]
                step0 = s / sum_w
                new_b0 += step0
                for i in range(n):
                    r[i] -= w[i] * step0
                if abs(step0) > max_change:
                    max_change = abs(step0)
            for j in range(d):
                hj = h[j]
                if hj <= 0.0:
                    continue
                g = 0.0
                for i in range(n):
                    g += XT[j, i] * r[i]
                old = new_beta[j]
                z = old * hj + g
                if z > lam:
                    new = (z - lam) / hj
                elif z < -lam:
                    new = (z + lam) / hj
                else:
                    new = 0.0
                if new != old:
                    diff = new - old
                    for i in range(n):
                        r[i] -= w[i] * XT[j, i] * diff
                    new_beta[j] = new
                    if abs(diff) > max_change:
                        max_change = abs(diff)
            if max_change < _INNER_TOL:
                break
        # Armijo backtracking along the proximal Newton direction
        db0 = new_b0 - b0
        decrease = 0.0
        for i in range(n):
            delta_eta[i] = db0
        for j in range(d):
            dj = new_beta[j] - beta[j]
            if dj != 0.0:
                for i in range(n):
                    delta_eta[i] += XT[j, i] * dj
        for i in range(n):
            decrease -= resid[i] * delta_eta[i]
        decrease += lam * (_l1(new_beta) - _l1(beta))
        t = 1.0
        accepted = False
        f_new = f
        for ls in range(60):
            for i in range(n):
                cand_eta[i] = eta[i] + t * delta_eta[i]
            pen = 0.0
            for j in range(d):
                pen += abs(beta[j] + t * (new_beta[j] - beta[j]))
            f_new = _loss(cand_eta, y) + lam * pen
            if f_new <= f and f_new <= f + _ARMIJO * t * decrease:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            converged = not degenerate
            break
        max_step = abs(t * db0)
        for j in range(d):
            step = t * (new_beta[j] - beta[j])
            if abs(step) > max_step:
                max_step = abs(step)
            beta[j] += step
        b0 += t * db0
        for i in range(n):
            eta[i] = cand_eta[i]
        f = f_new
        trace[n_trace] = f
        n_trace += 1
        if max_step < tol:
            converged = not degenerate
            break
    return beta, b0, n_trace, converged


@dataclass(frozen=True)
class LassoLogisticFit:
    coefficients: np.ndarray
    intercept: float
    lam: float
    objective_trace: np.ndarray
    converged: bool

    @property
    def n_sweeps(self) -> int:
        return self.objective_trace.size - 1


def _check_inputs(design, labels):
    design = np.asarray(design, dtype=float)
    labels = np.asarray(labels)
    if design.ndim != 2 or design.shape[0] != labels.size:
        raise ValueError("design must be N x d with one label per row")
    if design.shape[0] < 2 or design.shape[1] < 1:
        raise ValueError("need at least two rows and one column")
    if not (np.all(np.isfinite(design)) and np.all(np.isfinite(labels))):
        raise NonFiniteInput("design or labels contain non-finite values")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0/1")
    if labels.min() == labels.max():
        raise SingleClassLabels("labels contain a single class")
    return design, labels.astype(float)


def fit_lasso_logistic(design, labels, lam: float, max_sweeps: int = MAX_SWEEPS, tol: float = TOL,
                       warm_start=None) -> LassoLogisticFit:
    """L1-penalized logistic regression with an unpenalized intercept.

    Stops when no coefficient (intercept included) moves by more than ``tol``
    in a sweep, or after ``max_sweeps`` sweeps. ``converged`` is false when
    the sweep cap is hit or the curvature of the loss underflows, which is what
    happens on separable data with a negligible penalty.
    """
    design, y = _check_inputs(design, labels)
    if lam < 0:
        raise ValueError("lam must be non-negative")
    if warm_start is None:
        beta = np.zeros(design.shape[1])
        mean = y.mean()
        b0 = float(np.log(mean / (1 - mean)))
    else:
        beta = np.array(warm_start[0], dtype=float)
        b0 = float(warm_start[1])
    trace = np.empty(max_sweeps + 1)
    XT = np.ascontiguousarray(design.T)
    beta, b0, n_trace, converged = _solve(XT, y, float(lam), beta, b0, max_sweeps, tol, trace)
    return LassoLogisticFit(beta, float(b0), float(lam), trace[:n_trace].copy(), bool(converged))


def smooth_gradient(design, labels, beta, b0) -> tuple[np.ndarray, float]:
    """Gradient of the unpenalized logistic loss in ``(beta, b0)``."""
    eta = np.asarray(design) @ beta + b0
    resid = np.asarray(labels) - 1.0 / (1.0 + np.exp(-eta))
    return -(np.asarray(design).T @ resid), float(-resid.sum())


def logistic_objective(design, labels, beta, b0, lam) -> float:
    eta = np.asarray(design, dtype=float) @ beta + b0
    y = np.asarray(labels, dtype=float)
    return float(np.sum(np.logaddexp(0.0, eta) - y * eta) + lam * np.abs(beta).sum())


def auc(scores, labels) -> float:
    """Mann-Whitney estimate of the ROC area, ties counted as one half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    n_pos = labels.sum()
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def stratified_folds(labels, k: int, rng) -> np.ndarray:
    """Fold id per row; each class is shuffled and dealt round-robin."""
    labels = np.asarray(labels)
    folds = np.empty(labels.size, dtype=int)
    for cls in (0, 1):
        idx = np.flatnonzero(labels == cls)
        if idx.size < k:
            raise FoldConstructionError(f"class {cls} has {idx.size} members, fewer than {k} folds")
        folds[rng.permutation(idx)] = np.arange(idx.size) % k
    return folds


def cross_validated_auc(design, labels, grid=LAMBDA_GRID, folds: int = 5, rng=None) -> np.ndarray:
    """Mean validation AUC for every penalty in ``grid``."""
    design, y = _check_inputs(design, labels)
    grid = np.asarray(grid, dtype=float)
    fold_id = stratified_folds(y, folds, rng)
    order = np.argsort(grid)[::-1]  # largest penalty first for warm starts
    scores = np.zeros((folds, grid.size))
    for f in range(folds):
        train, valid = fold_id != f, fold_id == f
        warm = None
        for g in order:
            fit = fit_lasso_logistic(design[train], y[train], grid[g], warm_start=warm)
            warm = (fit.coefficients, fit.intercept)
            scores[f, g] = auc(design[valid] @ fit.coefficients, y[valid])
    return scores.mean(axis=0)


def cv_select_lambda(design, labels, grid=LAMBDA_GRID, folds: int = 5, rng=None) -> float:
    """Penalty with the best mean validation AUC; ties go to the larger penalty."""
    mean_auc = cross_validated_auc(design, labels, grid, folds, rng)
    best = mean_auc.max()
    candidates = [lam for lam, a in zip(grid, mean_auc) if a >= best - 1e-12]
    return float(max(candidates))


def standardize_columns(design) -> np.ndarray:
    """Center each column and scale it to unit variance; constant columns are only centered."""
    design = np.asarray(design, dtype=float)
    sd = design.std(axis=0)
    sd[sd == 0] = 1.0
    return (design - design.mean(axis=0)) / sd


@dataclass(frozen=True)
class KnockoffStats:
    t_scores: np.ndarray
    t_tilde_scores: np.ndarray
    w: np.ndarray


def knockoff_stats(fit: LassoLogisticFit, p: int) -> KnockoffStats:
    """Coefficient-difference statistics ``W_j = |b_j| - |b_{j+p}|``."""
    beta = fit.coefficients
    if beta.size != 2 * p:
        raise ValueError(f"fit has {beta.size} coefficients, expected {2 * p}")
    t = np.abs(beta[:p])
    t_tilde = np.abs(beta[p:])
    return KnockoffStats(t, t_tilde, t - t_tilde)


@dataclass(frozen=True)
class SelectionResult:
    selected: tuple
    threshold: float
    q: float


def knockoff_plus_threshold(w, q: float) -> SelectionResult:
    """Smallest nonzero ``|W_j|`` whose knockoff+ FDP estimate is at most ``q``."""
    w = np.asarray(w, dtype=float)
    if not np.all(np.isfinite(w)):
        raise NonFiniteInput("W contains non-finite values")
    candidates = np.unique(np.abs(w[w != 0]))
    # counts for every candidate at once: #{W <= -t} and #{W >= t}
    neg = np.sort(-w[w < 0])
    pos = np.sort(w[w > 0])
    n_neg = neg.size - np.searchsorted(neg, candidates, side="left")
    n_pos = pos.size - np.searchsorted(pos, candidates, side="left")
    ratio = (1.0 + n_neg) / np.maximum(1, n_pos)
    ok = np.flatnonzero(ratio <= q)
    if ok.size == 0:
        return SelectionResult((), float("inf"), q)
    tau = float(candidates[ok[0]])
    return SelectionResult(tuple(int(j) for j in np.flatnonzero(w >= tau)), tau, q)


def score_selection(result: SelectionResult, support, p: int) -> tuple[float, float]:
    """False discovery proportion and power of a selection."""
    support = set(int(j) for j in support)
    if any(j < 0 or j >= p for j in support):
        raise ValueError("support index out of range")
    selected = set(result.selected)
    false = len(selected - support)
    fdp = false / max(1, len(selected))
    power = len(selected & support) / len(support) if support else 0.0
    return fdp, power


@dataclass(frozen=True)
class FilterOutcome:
    result: SelectionResult
    stats: KnockoffStats
    lambda_cv: float
    fit: LassoLogisticFit


def lasso_knockoff_filter(x, x_tilde, labels, q: float, rng, grid=LAMBDA_GRID, folds: int = 5) -> FilterOutcome:
    """Run the whole filter on an imputed matrix and its knockoff matrix."""
    x = np.asarray(x, dtype=float)
    p = x.shape[1]
    design = standardize_columns(np.hstack([x, np.asarray(x_tilde, dtype=float)]))
    lam = cv_select_lambda(design, labels, grid, folds, rng)
    fit = fit_lasso_logistic(design, labels, lam)
    stats = knockoff_stats(fit, p)
    return FilterOutcome(knockoff_plus_threshold(stats.w, q), stats, lam, fit)
