"""Oracle certification suites run by ``missknock verify``.

Each suite builds small enumerable models from a seeded generator, computes
exact laws with :mod:`missknock.oracle` and compares them against tolerances.
The MSE suite is the only Monte Carlo one.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from itertools import product
from typing import Callable

import numpy as np

from . import discrete, hmm, latent, oracle
from .models import (
    DiscreteModel,
    HmmModel,
    MaskedSample,
    random_discrete_model,
    random_hmm,
    random_latent_model,
    random_mvn_model,
)
from .pipelines import (
    make_posterior_imputer,
    mse_compare,
    posterior_knockoffs,
    scip_observed_factory,
    univariate_knockoffs,
)
from .rng import make_rng

SUITES = ("exchangeability", "mar", "posterior", "mse", "mb")

EXCHANGEABILITY_TOL = 1e-10
MAR_TOL = 1e-12
ALPHA_TOL = 1e-12
PATH_TOL = 1e-10
MSE_SES = 4.0


@dataclass(frozen=True)
class CheckResult:
    suite: str
    name: str
    value: float
    tolerance: float
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.suite:<16} {self.name:<48} {self.value:.3e} (tol {self.tolerance:.0e})"


@dataclass
class VerificationReport:
    checks: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def max_value(self, suite: str | None = None) -> float:
        return max(c.value for c in self.checks if suite is None or c.suite == suite)

    def add(self, suite, name, value, tol):
        ok = value <= tol
        self.checks.append(CheckResult(suite, name, float(value), float(tol), bool(ok)))

    def render(self) -> str:
        lines = [c.line() for c in self.checks]
        n_fail = sum(not c.passed for c in self.checks)
        lines.append(f"{len(self.checks) - n_fail}/{len(self.checks)} checks passed in {self.seconds:.1f}s")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# test models and mask laws


def unconditioned_imputer(model) -> Callable:
    """Broken imputer that fills the missing block from ``P(X_m)``, ignoring ``x_o``."""
    impute = make_posterior_imputer(model)

    def draw(sample: MaskedSample, rng):
        blank = MaskedSample(np.full(sample.p, -1), np.ones(sample.p, dtype=bool))
        fresh = impute(blank, rng)
        x = sample.values.astype(int).copy()
        x[sample.missing] = fresh[sample.missing]
        return x

    return draw


def reference_models(rng) -> dict:
    """Enumerable discrete models keyed by a short label."""
    return {
        "hmm T=3 K=2 K'=2": random_hmm(rng, 3, 2, 2),
        "latent L=2 p=3": random_latent_model(rng, (2, 2), (2, 2, 2)),
        "discrete 2x3": random_discrete_model(rng, (2, 3), floor=0.02),
        "discrete 2x2x2": random_discrete_model(rng, (2, 2, 2), floor=0.02),
    }


def _mcar_law(rng, p):
    probs = rng.uniform(0.2, 0.7, size=p)
    law = oracle.mcar_mask_law(probs)
    return lambda x: law


def _mar_law(rng, model, p):
    """Coordinate 0 always observed; the others go missing at rates set by ``x_0``."""
    k0 = _num_symbols(model)[0]
    table = rng.uniform(0.1, 0.9, size=(k0, p))
    return lambda x: oracle.mar_mask_law(x, 0, table)


def _num_symbols(model) -> tuple:
    if isinstance(model, HmmModel):
        return (model.num_symbols,) * model.length
    return tuple(model.num_symbols)


def _full_knockoff_sampler(model) -> Callable:
    if isinstance(model, HmmModel):
        return lambda x, rng: hmm.sesia_knockoff(model, x, rng)
    if isinstance(model, DiscreteModel):
        return discrete.ScipKnockoffSampler(model)
    return lambda x, rng: latent.gz_knockoff(model, x, rng)


def _posterior_stages(model, imputer=None):
    """Posterior imputation and the full-data knockoff sampler as two stages.

    Composing the stages with :func:`oracle.chain` gives the law of
    :func:`posterior_knockoffs` (which runs exactly these two draws in order)
    at a fraction of the enumeration cost.
    """
    return imputer or make_posterior_imputer(model), _full_knockoff_sampler(model)


def posterior_pipeline(model, imputer=None):
    """Single-row posterior pipeline, for direct enumeration."""
    sampler = _full_knockoff_sampler(model)

    def run(sample, rng):
        return posterior_knockoffs([sample], model, sampler, rng, imputer=imputer)[0]

    return run


def _univariate_algorithm(model: DiscreteModel):
    factory = scip_observed_factory(model)

    def run(sample, rng):
        return univariate_knockoffs([sample], model, factory, rng)[0]

    return run


def _joint_algorithm(model):
    if isinstance(model, HmmModel):
        return lambda s, rng: hmm.modified_sesia_knockoffs(model, s, rng)
    return lambda s, rng: latent.gz_knockoffs(model, s, rng)


# ---------------------------------------------------------------------------
# suites


def suite_exchangeability(report: VerificationReport, rng, mutation: bool = False) -> None:
    for label, model in reference_models(rng).items():
        law_x = oracle.model_law(model)
        p = len(_num_symbols(model))
        mask_laws = {"MCAR": _mcar_law(rng, p), "MAR": _mar_law(rng, model, p)}
        imputer = unconditioned_imputer(model) if mutation else None
        algos = {"posterior": _posterior_stages(model, imputer)}
        if isinstance(model, DiscreteModel):
            algos["univariate"] = (_univariate_algorithm(model), None)
        else:
            algos["joint latent"] = (_joint_algorithm(model), None)
        for algo_name, (algo, then) in algos.items():
            for law_name, mask_law in mask_laws.items():
                if law_name == "MAR" and algo_name != "posterior":
                    continue  # only posterior imputation is covered under MAR
                joint = oracle.missing_data_law(law_x, mask_law, algo, then=then)
                tv = oracle.check_pairwise_exchangeable(joint, p)
                name = f"{label} {algo_name} {law_name}"
                if mutation:
                    name = "mutated " + name
                report.add("exchangeability", name, tv, EXCHANGEABILITY_TOL)


def suite_mar(report: VerificationReport, rng, mutation: bool = False) -> None:
    for label, model in reference_models(rng).items():
        law_x = oracle.model_law(model)
        p = len(_num_symbols(model))
        impute = unconditioned_imputer(model) if mutation else make_posterior_imputer(model)
        for law_name, mask_law in (("MCAR", _mcar_law(rng, p)), ("MAR", _mar_law(rng, model, p))):
            law_hat = oracle.missing_data_law(law_x, mask_law, impute)
            tv = oracle.check_distribution_preserved(law_x, law_hat)
            prefix = "mutated " if mutation else ""
            report.add("mar", f"{prefix}{label} {law_name}", tv, MAR_TOL)


def _all_masked_samples(num_symbols, length):
    """Every (mask, x_o) pair, with missing entries set to the sentinel."""
    for mask in product((False, True), repeat=length):
        mask = np.array(mask)
        for x in product(range(num_symbols), repeat=length):
            x = np.array(x)
            if np.any(x[mask] != 0):
                continue  # one representative per observed pattern
            yield MaskedSample.from_complete(x, mask)


def _fix_observed(zx: np.ndarray, n_latent: int, sample: MaskedSample, upto: int | None = None) -> np.ndarray:
    """Sum a ``(z..., x...)`` table over unobserved ``x`` axes, fixing observed ones.

    With ``upto`` given, observations after that step are also summed out.
    """
    index = [slice(None)] * n_latent
    for t, (v, missing) in enumerate(zip(sample.values, sample.mask)):
        keep = not missing and (upto is None or t <= upto)
        index.append(int(v) if keep else slice(None))
    out = zx[tuple(index)]
    return out.sum(axis=tuple(range(n_latent, out.ndim)))


def hmm_alpha_gap(model: HmmModel) -> tuple[float, float]:
    """Largest alpha-table error and backward-sampling TV over every (x_o, mask)."""
    T = model.length
    zx, _ = oracle.hmm_joint_table(model)
    worst_alpha = worst_tv = 0.0
    for sample in _all_masked_samples(model.num_symbols, T):
        alpha = hmm.forward_alpha(model, sample).values
        for t in range(T):
            part = _fix_observed(zx, T, sample, upto=t)
            ref = part.sum(axis=tuple(a for a in range(T) if a != t))
            worst_alpha = max(worst_alpha, float(np.max(np.abs(alpha[t] - ref))))
        post = _fix_observed(zx, T, sample)
        post = post / post.sum()
        brute = oracle.JointTable({z: float(v) for z, v in np.ndenumerate(post) if v > 0})
        law = oracle.enumerate_pipeline_joint(hmm.sample_latent_posterior, model, sample)
        worst_tv = max(worst_tv, oracle.total_variation(brute, law))
    return worst_alpha, worst_tv


def latent_full_table(model) -> np.ndarray:
    """``P(Z = z, X = x)`` with axes ``(z..., x...)``, one entry at a time."""
    shape = model.latent_shape + model.num_symbols
    out = np.zeros(shape)
    L = len(model.latent_shape)
    for idx in np.ndindex(*shape):
        z, x = idx[:L], idx[L:]
        v = model.latent_joint[z]
        for i, xi in enumerate(x):
            v *= model.emissions[i][z + (xi,)]
        out[idx] = v
    return out


def latent_posterior_gap(model) -> float:
    L = len(model.latent_shape)
    zx = latent_full_table(model)
    worst = 0.0
    k = model.num_symbols[0]
    for sample in _all_masked_samples(k, model.p):
        ref = _fix_observed(zx, L, sample)
        worst = max(worst, float(np.max(np.abs(latent.latent_posterior(model, sample) - ref / ref.sum()))))
    return worst


def suite_posterior(report: VerificationReport, rng, mutation: bool = False) -> None:
    models = {
        "hmm T=3 K=2 K'=2": random_hmm(rng, 3, 2, 2),
        "hmm T=3 K=3 K'=2": random_hmm(rng, 3, 3, 2),
        "hmm T=4 K=2 K'=3": random_hmm(rng, 4, 2, 3),
    }
    for label, model in models.items():
        alpha_gap, tv = hmm_alpha_gap(model)
        report.add("posterior", f"{label} alpha table", alpha_gap, ALPHA_TOL)
        report.add("posterior", f"{label} backward path law", tv, PATH_TOL)
    lat = random_latent_model(rng, (2, 2), (2, 2, 2))
    report.add("posterior", "latent L=2 p=3 posterior table", latent_posterior_gap(lat), ALPHA_TOL)


def suite_mse(report: VerificationReport, rng, mutation: bool = False, num_models: int = 20, num_samples: int = 20_000) -> None:
    worst_order = worst_post = worst_uni = -np.inf
    for _ in range(num_models):
        model = random_mvn_model(rng, int(rng.integers(2, 7)))
        j = int(rng.integers(model.p))
        r = mse_compare(model, j, num_samples, rng)
        worst_order = max(worst_order, (r.mse_posterior - r.mse_univariate) / r.se_combined)
        worst_post = max(worst_post, abs(r.mse_posterior - r.analytic_posterior) / r.se_posterior)
        worst_uni = max(worst_uni, abs(r.mse_univariate - r.analytic_univariate) / r.se_univariate)
    report.add("mse", f"posterior - univariate over {num_models} MVN models (SEs)", worst_order, MSE_SES)
    report.add("mse", "posterior vs analytic (SEs)", worst_post, MSE_SES)
    report.add("mse", "univariate vs analytic (SEs)", worst_uni, MSE_SES)


def suite_mb(report: VerificationReport, rng, mutation: bool = False, num_tables: int = 50) -> None:
    mismatches = 0
    for i in range(num_tables):
        p = int(rng.integers(1, 5))
        if i % 2 == 0:
            blanket = tuple(np.flatnonzero(rng.random(p) < 0.5))
            table = oracle.random_positive_joint(rng, p, blanket)
        else:
            table = oracle.random_positive_joint(rng, p)
        if oracle.markov_blanket_bruteforce(table) != oracle.pairwise_dependence_set(table):
            mismatches += 1
    report.add("mb", f"blanket != pairwise set on {num_tables} tables", mismatches, 0)


_RUNNERS = {
    "exchangeability": suite_exchangeability,
    "mar": suite_mar,
    "posterior": suite_posterior,
    "mse": suite_mse,
    "mb": suite_mb,
}


def verify(suite: str = "all", seed: int = 0, mutation: bool = False) -> VerificationReport:
    """Run one suite (or ``"all"``).

    With ``mutation`` set, posterior imputation is replaced by an unconditioned
    draw and only the suites that exercise it run; they are expected to fail.
    """
    names = SUITES if suite == "all" else (suite,)
    unknown = set(names) - set(SUITES)
    if unknown:
        raise ValueError(f"unknown suite {sorted(unknown)}; choose from {SUITES + ('all',)}")
    report = VerificationReport()
    start = time.perf_counter()
    for name in names:
        if mutation and name not in ("exchangeability", "mar"):
            continue
        # each suite gets its own stream so suites can be run on their own
        _RUNNERS[name](report, make_rng(np.random.SeedSequence(seed, spawn_key=(SUITES.index(name),))), mutation)
    report.seconds = time.perf_counter() - start
    return report
