import json
import subprocess
import sys

import numpy as np
import pandas as pd
import pytest


def read(path):
    return pd.read_csv(path, float_precision="round_trip")

from gpsvc.cli import main


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--out", str(out), "--n", "60", "--seed", "11"]) == 0
    return out


@pytest.fixture(scope="module")
def fitted(simulated, tmp_path_factory):
    out = tmp_path_factory.mktemp("fit")
    code = main(["fit", "--data", str(simulated / "data.csv"), "--fixed", "x1,x2",
                 "--locs", "loc1", "--kernel", "mat32", "--out", str(out)])
    assert code == 0
    return out


def test_simulate_reference_configuration(tmp_path):
    assert main(["simulate", "--out", str(tmp_path), "--seed", "1"]) == 0
    df = read(tmp_path / "data.csv")
    assert list(df.columns) == ["y", "x1", "x2", "loc1"]
    assert len(df) == 300
    truth = read(tmp_path / "truth.csv")
    assert list(truth.columns) == ["beta_1", "beta_2"]
    params = json.loads((tmp_path / "params.json").read_text())
    assert params["schema_version"] == 1 and params["means"] == [1.0, 2.0]


def test_simulate_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["simulate", "--out", str(d), "--n", "50", "--seed", "7"]) == 0
    assert (a / "data.csv").read_bytes() == (b / "data.csv").read_bytes()


def test_simulate_without_randomness_reproduces_means(tmp_path):
    code = main(["simulate", "--out", str(tmp_path), "--n", "20", "--variances", "0,0",
                 "--nugget-sd", "0", "--seed", "3"])
    assert code == 0
    df = read(tmp_path / "data.csv")
    np.testing.assert_allclose(df["y"], 1.0 * df["x1"] + 2.0 * df["x2"], rtol=1e-15, atol=1e-14)


def test_simulate_rejects_bad_parameters(tmp_path, capsys):
    assert main(["simulate", "--out", str(tmp_path), "--variances", "1"]) != 0
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("gpsvc: error: ParameterError:")
    assert main(["simulate", "--out", str(tmp_path), "--nugget-sd", "-1"]) != 0


def test_fit_outputs(fitted, simulated):
    doc = json.loads((fitted / "fit.json").read_text())
    assert doc["schema_version"] == 1
    assert doc["n_estimates"] == 2 + 2 * 2 + 1
    est = doc["estimates"]
    assert len(est["mu"]) + len(est["rho"]) + len(est["sigma2"]) + 1 == 7
    resid = read(fitted / "residuals.csv")
    assert len(resid) == 60 and np.all(np.isfinite(resid["residual"]))


def test_fit_summary_sections(simulated, tmp_path, capsys):
    main(["fit", "--data", str(simulated / "data.csv"), "--fixed", "x1,x2", "--locs", "loc1",
          "--kernel", "mat32", "--out", str(tmp_path)])
    text = capsys.readouterr().out
    for heading in ("Coefficients of fixed effect(s):", "Covariance parameters of the SVC(s):", "MLE:"):
        assert heading in text


def test_profile_and_full_fits_agree(simulated, tmp_path):
    args = ["fit", "--data", str(simulated / "data.csv"), "--fixed", "x1,x2", "--locs", "loc1",
            "--kernel", "mat32"]
    assert main(args + ["--out", str(tmp_path / "p")]) == 0
    assert main(args + ["--no-profile", "--out", str(tmp_path / "f")]) == 0
    a = json.loads((tmp_path / "p" / "fit.json").read_text())
    b = json.loads((tmp_path / "f" / "fit.json").read_text())
    assert abs(a["neg2loglik"] - b["neg2loglik"]) < 1e-2 * abs(a["neg2loglik"])


def test_predict_header_and_values(fitted, simulated, tmp_path):
    newlocs = tmp_path / "new.csv"
    pd.DataFrame({"loc1": [0.5, 3.0, 9.9]}).to_csv(newlocs, index=False)
    assert main(["predict", "--fit", str(fitted / "fit.json"), "--newlocs", str(newlocs),
                 "--out", str(tmp_path)]) == 0
    text = (tmp_path / "predictions.csv").read_text().splitlines()
    assert text[0] == "SVC_1,SVC_2"
    assert len(text) == 4


def test_predict_at_training_locations_with_covariates(fitted, simulated, tmp_path):
    assert main(["predict", "--fit", str(fitted / "fit.json"), "--newlocs",
                 str(simulated / "data.csv"), "--out", str(tmp_path)]) == 0
    pred = read(tmp_path / "predictions.csv")
    assert list(pred.columns) == ["SVC_1", "SVC_2", "y_hat", "pred_var"]
    assert np.all(np.isfinite(pred.to_numpy()))
    # adding the mean effects gives the full coefficient surfaces
    mu = json.loads((fitted / "fit.json").read_text())["estimates"]["mu"]
    data = read(simulated / "data.csv")
    beta = pred[["SVC_1", "SVC_2"]].to_numpy() + np.array(mu)
    np.testing.assert_allclose(pred["y_hat"], np.sum(beta * data[["x1", "x2"]].to_numpy(), axis=1),
                               rtol=1e-10)


def test_predict_missing_fit(tmp_path, capsys):
    newlocs = tmp_path / "new.csv"
    pd.DataFrame({"loc1": [1.0]}).to_csv(newlocs, index=False)
    code = main(["predict", "--fit", str(tmp_path / "absent.json"), "--newlocs", str(newlocs),
                 "--out", str(tmp_path)])
    assert code != 0
    assert capsys.readouterr().err.startswith("gpsvc: error: FileNotFound:")


def test_fit_missing_column(simulated, tmp_path, capsys):
    code = main(["fit", "--data", str(simulated / "data.csv"), "--fixed", "x1,x9",
                 "--locs", "loc1", "--out", str(tmp_path)])
    assert code != 0
    assert "ColumnError" in capsys.readouterr().err


@pytest.mark.parametrize("method, extra, rows", [
    ("grid", ["--n-per-dim", "3"], 9),
    ("mbo", ["--n-init", "3", "--n-iter", "2", "--seed", "4"], 5),
])
def test_select_outputs(simulated, tmp_path, method, extra, rows):
    code = main(["select", "--data", str(simulated / "data.csv"), "--fixed", "x1,x2",
                 "--locs", "loc1", "--kernel", "mat32", "--method", method,
                 "--cd-cycles", "3", "--out", str(tmp_path)] + extra)
    assert code == 0
    trace = read(tmp_path / "selection_trace.csv")
    assert list(trace.columns) == ["method", "iter", "lambda_mu", "lambda_theta", "ic_value", "converged"]
    assert len(trace) == rows
    sel = json.loads((tmp_path / "selected.json").read_text())
    assert sel["ic_value"] == trace["ic_value"].min()
    assert sel["n_evaluations"] == rows


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "gpsvc", "predict", "--fit", "nope.json",
                          "--newlocs", "nope.csv", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode != 0
    assert res.stderr.startswith("gpsvc: error:")
