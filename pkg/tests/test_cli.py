import csv
import json

import numpy as np
import pytest

from missknock.cli import main


def test_bad_command_is_usage_error(capsys):
    assert main(["frobnicate"]) == 2


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0


def test_invalid_method_is_usage_error(tmp_path, capsys):
    assert main(["simulate", "--method", "modified-sesia", "--out", str(tmp_path)]) == 2


def test_bad_config_file(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text("{not json")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_simulate_small_config(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"p": 8, "N_grid": [60], "support_size": 2, "rho_grid": [0.3],
                               "p0_grid": [0.2], "replicates": 2}))
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(cfg), "--seed", "5", "--out", str(out)]) == 0
    with open(out / "trials.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 and all(r["status"] == "ok" for r in rows)
    assert json.loads((out / "run.json").read_text())["master_seed"] == 5


def test_verify_exit_codes(capsys):
    assert main(["verify", "--suite", "mb"]) == 0
    assert main(["verify", "--suite", "mar", "--mutate"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_mse_prints_json(capsys):
    assert main(["mse", "--p", "3", "--rho", "0.5", "--target", "1", "--samples", "2000"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["analytic_univariate"] == pytest.approx(2.0)
    assert report["analytic_posterior"] == pytest.approx(2 * (1 - 0.5**2 * 2 / (1 + 0.5**2)))


def test_mse_bad_target(capsys):
    assert main(["mse", "--p", "3", "--target", "3"]) == 2


@pytest.mark.parametrize("method", ["posterior", "univariate"])
def test_impute_roundtrip(tmp_path, method, capsys):
    rng = np.random.default_rng(0)
    x = rng.multivariate_normal(np.zeros(3), [[1, 0.5, 0.2], [0.5, 1, 0.5], [0.2, 0.5, 1]], size=50)
    x[rng.random(x.shape) < 0.2] = np.nan
    src = tmp_path / "in.csv"
    with open(src, "w") as fh:
        fh.write("a,b,c\n")
        for row in x:
            fh.write(",".join("" if np.isnan(v) else repr(float(v)) for v in row) + "\n")
    out = tmp_path / "out"
    assert main(["impute", str(src), "--method", method, "--out", str(out)]) == 0
    imputed = np.loadtxt(out / "imputed.csv", delimiter=",", skiprows=1)
    knock = np.loadtxt(out / "knockoffs.csv", delimiter=",", skiprows=1)
    assert imputed.shape == knock.shape == (50, 3)
    assert np.all(np.isfinite(imputed)) and np.all(np.isfinite(knock))
    obs = ~np.isnan(x)
    np.testing.assert_array_equal(imputed[obs], x[obs])


def test_impute_with_model_file(tmp_path, capsys):
    src = tmp_path / "in.csv"
    src.write_text("a,b\n1.0,\n,2.0\n0.5,0.5\n")
    model = tmp_path / "m.json"
    model.write_text(json.dumps({"mean": [0, 0], "covariance": [[1, 0.3], [0.3, 1]]}))
    assert main(["impute", str(src), "--model", str(model), "--out", str(tmp_path / "o")]) == 0
    model.write_text(json.dumps({"mean": [0], "covariance": [[1]]}))
    assert main(["impute", str(src), "--model", str(model), "--out", str(tmp_path / "o")]) == 2


def test_impute_rejects_garbage_cells(tmp_path, capsys):
    src = tmp_path / "in.csv"
    src.write_text("a,b\n1.0,abc\n2.0,NA\n")
    assert main(["impute", str(src), "--out", str(tmp_path / "o")]) == 2
    assert "abc" in capsys.readouterr().err


def test_impute_missing_file(tmp_path, capsys):
    assert main(["impute", str(tmp_path / "none.csv"), "--out", str(tmp_path)]) == 2
