"""Command line entry point: ``missknock {simulate,verify,mse,impute}``.

Exit codes: 0 success, 1 failed verification or aborted run, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .errors import ExperimentAborted, MissknockError
from .gaussian import build_gaussian_knockoff_sampler
from .harness import METHODS, PRESETS, ExperimentConfig, emit_results, run_experiment, with_overrides
from .models import MASK_MODES, MaskedSample, MvnModel, make_ar1_covariance
from .pipelines import gaussian_observed_factory, mse_compare, posterior_knockoffs, stack_pairs, univariate_knockoffs
from .rng import make_rng
from .verification import SUITES, verify

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="missknock", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a simulation grid and write CSV/JSON results")
    sim.add_argument("--config", type=Path, help="JSON file with ExperimentConfig fields")
    sim.add_argument("--family", choices=sorted(METHODS), default="mvn", help="preset family (default mvn)")
    scale = sim.add_mutually_exclusive_group()
    scale.add_argument("--desk", dest="scale", action="store_const", const="desk", help="desk-scale preset (default)")
    scale.add_argument("--paper", dest="scale", action="store_const", const="paper", help="paper-scale preset")
    sim.add_argument("--method", help="override the pipeline")
    sim.add_argument("--mask-mode", choices=MASK_MODES, help="override the missingness candidate set")
    sim.add_argument("--replicates", type=int, help="override the replicate count")
    sim.add_argument("--seed", type=int, help="master seed")
    sim.add_argument("--out", type=Path, required=True, help="output directory")
    sim.add_argument("--threads", type=int, default=1, help="worker processes (default 1)")
    sim.add_argument("--record-timing", action="store_true",
                     help="fill the wall_ms column (makes trials.csv non-reproducible)")

    ver = sub.add_parser("verify", help="run oracle certification suites")
    ver.add_argument("--suite", choices=SUITES + ("all",), default="all")
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--mutate", action="store_true",
                     help="replace posterior imputation by an unconditioned draw (the suite should fail)")

    mse = sub.add_parser("mse", help="posterior versus univariate imputation MSE on an AR(1) Gaussian")
    mse.add_argument("--p", type=int, default=5)
    mse.add_argument("--rho", type=float, default=0.6)
    mse.add_argument("--target", type=int, default=0, help="0-based coordinate to impute")
    mse.add_argument("--samples", type=int, default=100_000)
    mse.add_argument("--seed", type=int, default=0)

    imp = sub.add_parser("impute", help="impute a CSV with NaN-coded gaps and draw Gaussian knockoffs")
    imp.add_argument("input", type=Path, help="CSV with a header row; empty or NaN cells are missing")
    imp.add_argument("--model", type=Path, help='JSON {"mean": [...], "covariance": [[...]]}; default: moment estimate')
    imp.add_argument("--method", choices=("posterior", "univariate"), default="posterior")
    imp.add_argument("--out", type=Path, required=True, help="output directory for imputed.csv and knockoffs.csv")
    imp.add_argument("--seed", type=int, default=0)
    return parser


# ---------------------------------------------------------------------------


def _load_config(args) -> ExperimentConfig:
    if args.config is not None:
        try:
            data = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        base = ExperimentConfig.from_json(data)
    else:
        base = PRESETS[f"{args.family}-{args.scale or 'desk'}"]
    return with_overrides(base, method=args.method, mask_mode=args.mask_mode,
                          replicates=args.replicates, master_seed=args.seed)


def cmd_simulate(args) -> int:
    if args.threads < 1:
        raise UsageError("--threads must be at least 1")
    config = _load_config(args)
    try:
        result = run_experiment(config, threads=args.threads, record_timing=args.record_timing)
    except ExperimentAborted as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_FAIL
    files = emit_results(result, args.out)
    for row in result.summary:
        rho = "" if row["rho"] is None else f"rho={row['rho']:<4} "
        print(f"{rho}N={row['N']:<5} p0={row['p0']:<5} mean_fdp={row['mean_fdp']:.4f} "
              f"mean_power={row['mean_power']:.4f} n_ok={row['n_ok']}")
    print(f"wrote {', '.join(str(f) for f in files.values())}")
    return EXIT_OK


def cmd_verify(args) -> int:
    report = verify(args.suite, seed=args.seed, mutation=args.mutate)
    print(report.render())
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_mse(args) -> int:
    if not 0 <= args.target < args.p:
        raise UsageError("--target must index a coordinate")
    if args.samples < 2:
        raise UsageError("--samples must be at least 2")
    model = MvnModel(np.zeros(args.p), make_ar1_covariance(args.p, args.rho))
    report = mse_compare(model, args.target, args.samples, make_rng(args.seed))
    print(json.dumps({
        "mse_posterior": report.mse_posterior,
        "mse_univariate": report.mse_univariate,
        "analytic_posterior": report.analytic_posterior,
        "analytic_univariate": report.analytic_univariate,
        "se_posterior": report.se_posterior,
        "se_univariate": report.se_univariate,
    }, indent=2))
    return EXIT_OK


_MISSING_CELLS = {"", "na", "nan"}


def read_masked_csv(path: Path) -> tuple[list[str], np.ndarray]:
    """Header and float matrix; empty, ``NA`` and ``NaN`` cells become NaN, anything else unparsable is an error."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            rows = [row for row in reader if row]
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    if not header or not rows:
        raise UsageError(f"{path}: need a header row and at least one data row")
    data = np.empty((len(rows), len(header)))
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise UsageError(f"{path}: line {i + 2} has {len(row)} fields, header has {len(header)}")
        for j, cell in enumerate(row):
            cell = cell.strip()
            if cell.lower() in _MISSING_CELLS:
                data[i, j] = np.nan
                continue
            try:
                data[i, j] = float(cell)
            except ValueError as exc:
                raise UsageError(f"{path}: line {i + 2}, column {header[j]!r}: cannot parse {cell!r}") from exc
            if not np.isfinite(data[i, j]):
                raise UsageError(f"{path}: line {i + 2}, column {header[j]!r}: infinite value")
    return header, data


def write_matrix_csv(path: Path, header, matrix) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows([repr(float(v)) for v in row] for row in matrix)


def estimate_mvn(data: np.ndarray) -> MvnModel:
    """Moment estimate from pairwise-complete observations, clipped to a PSD matrix."""
    obs = ~np.isnan(data)
    if np.any(obs.sum(axis=0) < 2):
        raise UsageError("every column needs at least two observed values")
    mean = np.nanmean(data, axis=0)
    centered = np.where(obs, data - mean, 0.0)
    counts = obs.T.astype(float) @ obs.astype(float)
    if np.any(counts < 2):
        raise UsageError("some column pair is never observed together")
    cov = centered.T @ centered / (counts - 1)
    cov = (cov + cov.T) / 2
    vals, vecs = np.linalg.eigh(cov)
    floor = 1e-8 * max(vals.max(), 1e-12)
    cov = (vecs * np.maximum(vals, floor)) @ vecs.T
    return MvnModel(mean, (cov + cov.T) / 2)


def _load_model(path: Path, p: int) -> MvnModel:
    try:
        spec = json.loads(path.read_text())
        model = MvnModel(np.asarray(spec["mean"], dtype=float), np.asarray(spec["covariance"], dtype=float))
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise UsageError(f"cannot read model {path}: {exc}") from exc
    if model.p != p:
        raise UsageError(f"model has dimension {model.p}, data has {p} columns")
    return model


def cmd_impute(args) -> int:
    header, data = read_masked_csv(args.input)
    model = _load_model(args.model, data.shape[1]) if args.model else estimate_mvn(data)
    mask = np.isnan(data)
    rows = [MaskedSample(data[i], mask[i]) for i in range(data.shape[0])]
    rng = make_rng(args.seed)
    if args.method == "posterior":
        pairs = posterior_knockoffs(rows, model, build_gaussian_knockoff_sampler(model), rng)
    else:
        pairs = univariate_knockoffs(rows, model, gaussian_observed_factory(model), rng)
    x_hat, x_tilde = stack_pairs(pairs)
    args.out.mkdir(parents=True, exist_ok=True)
    for name, matrix in (("imputed.csv", x_hat), ("knockoffs.csv", x_tilde)):
        write_matrix_csv(args.out / name, header, matrix)
    print(f"wrote {args.out / 'imputed.csv'} and {args.out / 'knockoffs.csv'} ({data.shape[0]} rows)")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "verify": cmd_verify, "mse": cmd_mse, "impute": cmd_impute}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MissknockError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
