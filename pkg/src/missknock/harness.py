"""Seeded simulation grid: covariates, response, masks, knockoffs, filter, scoring.

Every trial owns the stream ``trial_rng(master_seed, grid_index, replicate)``,
split into one child stream per stage, so a trial's result depends only on
its coordinates and not on scheduling. The response support and coefficients
are drawn once per experiment from the setup stream.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache, partial
from pathlib import Path

import numpy as np

from . import __version__, hmm
from .errors import ExperimentAborted, MissknockError
from .gaussian import build_gaussian_knockoff_sampler
from .models import (
    MASK_MODES,
    MaskedSample,
    MissingnessSpec,
    MvnModel,
    ResponseModel,
    generate_mcar_masks,
    make_ar1_covariance,
    make_paper_hmm,
    simulate_response,
)
from .pipelines import gaussian_observed_factory, posterior_knockoffs, stack_pairs, univariate_knockoffs
from .rng import make_rng, setup_seed_sequence, spawn, trial_rng, trial_seed
from .selection import lasso_knockoff_filter, score_selection

FAMILIES = ("mvn", "hmm")
METHODS = {
    "mvn": ("posterior", "univariate"),
    "hmm": ("modified-sesia", "posterior-sesia"),
}
AMPLITUDE_RULE = "10/sqrt(N)"
MAX_FAILURE_RATE = 0.05

TRIAL_FIELDS = (
    "family", "method", "rho", "p0", "N", "rep", "fdp", "power",
    "n_selected", "tau", "lambda_cv", "seed", "wall_ms", "status",
)
SUMMARY_FIELDS = ("family", "method", "rho", "p0", "N", "mean_fdp", "se_fdp", "mean_power", "se_power", "n_ok")


@dataclass(frozen=True)
class ExperimentConfig:
    """One simulation grid.

    ``amplitude`` is a number or the string ``"10/sqrt(N)"``. MVN grids run
    over ``rho_grid x p0_grid`` for each ``N`` in ``N_grid``; HMM grids run
    over ``N_grid x p0_grid`` and ignore ``rho_grid``.
    """

    family: str = "mvn"
    p: int = 50
    N_grid: tuple = (150,)
    amplitude: float | str = AMPLITUDE_RULE
    support_size: int = 6
    q: float = 0.1
    rho_grid: tuple = (0.0, 0.4, 0.8)
    p0_grid: tuple = (0.0, 0.2, 0.4)
    mask_mode: str = "all"
    method: str = "posterior"
    replicates: int = 200
    master_seed: int = 20240521
    response_shift: float = 0.0

    def __post_init__(self):
        for name in ("N_grid", "rho_grid", "p0_grid"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}")
        if self.method not in METHODS[self.family]:
            raise ValueError(f"method {self.method!r} is not available for family {self.family!r}")
        if self.mask_mode not in MASK_MODES:
            raise ValueError(f"mask_mode must be one of {MASK_MODES}")
        if not 0.0 < self.q < 1.0:
            raise ValueError("q must lie in (0, 1)")
        if not self.N_grid or not self.p0_grid or (self.family == "mvn" and not self.rho_grid):
            raise ValueError("grids must be nonempty")
        if not 0 < self.support_size <= self.p:
            raise ValueError("support_size must lie in [1, p]")
        if self.replicates < 0:
            raise ValueError("replicates must be nonnegative")
        if isinstance(self.amplitude, str) and self.amplitude != AMPLITUDE_RULE:
            raise ValueError(f"amplitude must be a number or {AMPLITUDE_RULE!r}")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")

    def amplitude_for(self, N: int) -> float:
        if self.amplitude == AMPLITUDE_RULE:
            return 10.0 / math.sqrt(N)
        return float(self.amplitude)

    def grid_points(self) -> list[tuple]:
        """``(rho, N, p0)`` triples in emission order; ``rho`` is ``None`` for HMM grids."""
        if self.family == "hmm":
            return [(None, N, p0) for N in self.N_grid for p0 in self.p0_grid]
        return [(rho, N, p0) for N in self.N_grid for rho in self.rho_grid for p0 in self.p0_grid]

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


PRESETS = {
    "mvn-desk": ExperimentConfig(),
    "hmm-desk": ExperimentConfig(
        family="hmm", p=60, N_grid=(300,), amplitude=0.32, support_size=6, rho_grid=(),
        p0_grid=(0.0, 0.2, 0.4), mask_mode="true-features", method="modified-sesia",
        replicates=100, response_shift=4.0,
    ),
    "mvn-paper": ExperimentConfig(
        p=700, N_grid=(1050,), support_size=42, rho_grid=tuple(round(0.1 * i, 1) for i in range(9)),
        p0_grid=tuple(round(0.1 * i, 1) for i in range(5)), replicates=31,
    ),
    "hmm-paper": ExperimentConfig(
        family="hmm", p=1000, N_grid=tuple(range(500, 2001, 125)), amplitude=0.32, support_size=60,
        rho_grid=(), p0_grid=tuple(round(0.05 * i, 2) for i in range(11)), mask_mode="true-features",
        method="modified-sesia", replicates=128, response_shift=4.0,
    ),
}


@dataclass(frozen=True)
class TrialRecord:
    family: str
    method: str
    rho: float | None
    p0: float
    N: int
    rep: int
    fdp: float
    power: float
    n_selected: int | None
    tau: float
    lambda_cv: float
    seed: int
    wall_ms: float | None
    status: str

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list
    summary: list = field(default_factory=list)


def experiment_response(config: ExperimentConfig) -> tuple:
    """Support ``S*`` drawn once per experiment from the setup stream."""
    rng = make_rng(setup_seed_sequence(config.master_seed))
    support = np.sort(rng.choice(config.p, size=config.support_size, replace=False))
    return tuple(int(j) for j in support)


@lru_cache(maxsize=64)
def _mvn_setup(p: int, rho: float):
    model = MvnModel(np.zeros(p), make_ar1_covariance(p, rho))
    return model, build_gaussian_knockoff_sampler(model)


@lru_cache(maxsize=8)
def _hmm_model(p: int):
    return make_paper_hmm(p)


def _knockoffs(config: ExperimentConfig, rho, rows, rng):
    if config.family == "mvn":
        model, sampler = _mvn_setup(config.p, float(rho))
        if config.method == "posterior":
            return posterior_knockoffs(rows, model, sampler, rng)
        return univariate_knockoffs(rows, model, gaussian_observed_factory(model), rng)
    model = _hmm_model(config.p)
    if config.method == "modified-sesia":
        return [hmm.modified_sesia_knockoffs(model, row, r) for row, r in zip(rows, spawn(rng, len(rows)))]
    return posterior_knockoffs(rows, model, partial(hmm.sesia_knockoff, model), rng)


def run_trial(config: ExperimentConfig, support: tuple, grid_index: int, replicate: int,
              record_timing: bool = False) -> TrialRecord:
    rho, N, p0 = config.grid_points()[grid_index]
    start = time.perf_counter()
    rng = trial_rng(config.master_seed, grid_index, replicate)
    s_x, s_y, s_mask, s_knock, s_filter = rng.spawn(5)
    base = dict(family=config.family, method=config.method, rho=rho, p0=p0, N=N, rep=replicate,
                seed=trial_seed(config.master_seed, grid_index, replicate))
    try:
        if config.family == "mvn":
            x = _mvn_setup(config.p, float(rho))[0].sample(N, s_x)
        else:
            x = _hmm_model(config.p).sample(N, s_x)[1]
        response = ResponseModel.from_support(config.p, support, config.amplitude_for(N))
        y = simulate_response(x, response, s_y, shift=config.response_shift)
        masks = generate_mcar_masks(N, config.p, MissingnessSpec(p0, config.mask_mode), support, s_mask)
        rows = [MaskedSample.from_complete(x[i], masks[i]) for i in range(N)]
        x_hat, x_tilde = stack_pairs(_knockoffs(config, rho, rows, s_knock))
        outcome = lasso_knockoff_filter(x_hat, x_tilde, y, config.q, s_filter)
        fdp, power = score_selection(outcome.result, support, config.p)
        wall = (time.perf_counter() - start) * 1e3 if record_timing else None
        return TrialRecord(**base, fdp=fdp, power=power, n_selected=len(outcome.result.selected),
                           tau=outcome.result.threshold, lambda_cv=outcome.lambda_cv, wall_ms=wall, status="ok")
    except (MissknockError, np.linalg.LinAlgError, FloatingPointError) as exc:
        wall = (time.perf_counter() - start) * 1e3 if record_timing else None
        return TrialRecord(**base, fdp=math.nan, power=math.nan, n_selected=None, tau=math.nan,
                           lambda_cv=math.nan, wall_ms=wall, status=type(exc).__name__)


def _run_task(args):
    return run_trial(*args)


def run_experiment(config: ExperimentConfig, threads: int = 1, record_timing: bool = False,
                   progress=None) -> ExperimentResult:
    """Run every (grid point, replicate) trial and aggregate.

    Records come back in (grid, replicate) order whatever ``threads`` is.
    Raises :class:`ExperimentAborted` once failures exceed 5% of the planned trials.
    """
    support = experiment_response(config)
    n_grid = len(config.grid_points())
    tasks = [(config, support, g, r, record_timing) for g in range(n_grid) for r in range(config.replicates)]
    budget = MAX_FAILURE_RATE * len(tasks)
    records, failures = [], 0
    if threads > 1:
        pool = ProcessPoolExecutor(max_workers=threads)
        stream = pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (8 * threads)))
    else:
        pool = None
        stream = map(_run_task, tasks)
    try:
        for rec in stream:
            records.append(rec)
            failures += not rec.ok
            if failures > budget:
                raise ExperimentAborted(f"{failures} of {len(tasks)} trials failed (last: {rec.status})")
            if progress is not None:
                progress(len(records), len(tasks))
    finally:
        if pool is not None:
            pool.shutdown(cancel_futures=True)
    return ExperimentResult(config, records, summarize(config, records))


def _mean_se(values):
    values = np.asarray(values, dtype=float)
    n = values.size
    if n == 0:
        return math.nan, math.nan
    se = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan
    return float(values.mean()), se


def summarize(config: ExperimentConfig, records) -> list[dict]:
    """One row per grid point with mean FDP, mean power, their SEs and ``n_ok``."""
    out = []
    for rho, N, p0 in config.grid_points():
        ok = [r for r in records if r.ok and r.rho == rho and r.N == N and r.p0 == p0]
        mean_fdp, se_fdp = _mean_se([r.fdp for r in ok])
        mean_power, se_power = _mean_se([r.power for r in ok])
        out.append(dict(family=config.family, method=config.method, rho=rho, p0=p0, N=N,
                        mean_fdp=mean_fdp, se_fdp=se_fdp, mean_power=mean_power, se_power=se_power,
                        n_ok=len(ok)))
    return out


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def emit_results(result: ExperimentResult, path) -> dict:
    """Write ``trials.csv``, ``summary.csv`` and ``run.json`` under ``path``."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    files = {"trials": out / "trials.csv", "summary": out / "summary.csv", "run": out / "run.json"}
    with open(files["trials"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIAL_FIELDS)
        for rec in result.records:
            w.writerow([_cell(getattr(rec, f)) for f in TRIAL_FIELDS])
    with open(files["summary"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for row in result.summary:
            w.writerow([_cell(row[f]) for f in SUMMARY_FIELDS])
    meta = {
        "config": result.config.to_json(),
        "master_seed": result.config.master_seed,
        "code_version": __version__,
        "n_trials": len(result.records),
        "n_failed": sum(not r.ok for r in result.records),
        "support": list(experiment_response(result.config)),
    }
    files["run"].write_text(json.dumps(meta, indent=2) + "\n")
    return files


def with_overrides(config: ExperimentConfig, **overrides) -> ExperimentConfig:
    return replace(config, **{k: v for k, v in overrides.items() if v is not None})
