import json
import subprocess
import sys

import pandas as pd
import pytest

from txrecords.cli import main


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    spec = {"kind": "logistic-link", "T": 54, "L": 16, "S": 8, "seed": 3}
    (root / "small.json").write_text(json.dumps(spec))
    data = root / "small"
    assert run("simulate", "--spec", root / "small.json", "--out", data) == 0
    return data


def inputs(data):
    return ["--station-data", data / "station_data.csv", "--station-meta", data / "station_meta.csv",
            "--geofield", data / "geofield.csv"]


@pytest.fixture(scope="module")
def fitted(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("fit1")
    assert run("ingest", *inputs(corpus), "--out", out) == 0
    assert run("fit", *inputs(corpus), "--out", out, "--m-min", 2, "--jobs", 1) == 0
    return out


def test_simulate_writes_inputs(corpus):
    for name in ("station_data.csv", "station_meta.csv", "geofield.csv", "synth.json"):
        assert (corpus / name).exists()
    assert len(pd.read_csv(corpus / "station_meta.csv")) == 8


def test_fit_outputs(fitted):
    assert (fitted / "m1.json").exists()
    crit = pd.read_csv(fitted / "criteria.csv")
    assert len(crit) == 5 and list(crit["model"]) == ["M1", "M2", "M3", "M4", "M5"]
    assert {"auc", "k", "auc_coastal", "auc_inland", "aic"} <= set(crit.columns)
    assert len(list((fitted / "local_models").glob("*.json"))) == 8
    doc = json.loads((fitted / "pipeline.json").read_text())
    assert doc["best_model"] in set(crit["model"])
    assert doc["global_k_penalty"] == pytest.approx(10.8276, abs=1e-3)


def test_fit_identical_across_jobs(corpus, fitted, tmp_path):
    assert run("fit", *inputs(corpus), "--out", tmp_path, "--m-min", 2, "--jobs", 2) == 0
    names = ["consensus.csv", "criteria.csv", "pipeline.json"] + [f"m{i}.json" for i in range(1, 6)]
    names += [f"local_models/{p.name}" for p in (fitted / "local_models").glob("*.json")]
    for n in names:
        assert (tmp_path / n).read_bytes() == (fitted / n).read_bytes(), n


def test_validate_is_reproducible(fitted):
    args = ["validate", "--out", fitted, "--n-sim", 200, "--seed", 5]
    assert run(*args) == 0
    first = {n: (fitted / n).read_bytes()
             for n in ("validation_report.json", "streaks.csv", "concurrence.csv", "roc_m2.csv")}
    assert run(*args, "--jobs", 2) == 0
    for n, b in first.items():
        assert (fitted / n).read_bytes() == b, n
    rep = json.loads(first["validation_report.json"])
    assert set(rep["models"]) == {"M1", "M2", "M3", "M4", "M5"}
    assert len(pd.read_csv(fitted / "streaks.csv")) == 5


def test_threshold_and_predict(corpus, fitted):
    assert run("threshold", "--out", fitted, "--tnr", 0.95, "--model", "M1") == 0
    thr = json.loads((fitted / "threshold_m1.json").read_text())
    assert thr["fpr"] <= 0.05 + 1e-12
    date = "2012-06-10"
    assert run("predict", "--geofield", corpus / "geofield.csv", "--out", fitted,
               "--date", date, "--model", "M1") == 0
    grid = pd.read_csv(fitted / f"grid_{date}.csv")
    assert grid["prob"].between(0, 1).all() and len(grid) > 0


def test_eda_on_stationary_data(tmp_path):
    data = tmp_path / "iid"
    assert run("simulate", "--kind", "stationary-iid", "--sim-seed", 1, "--out", data) == 0
    out = tmp_path / "eda"
    assert run("eda", *inputs(data), "--out", out, "--n-sim", 1000) == 0
    tp = pd.read_csv(out / "t_phat.csv")
    late = tp[tp["t"] >= 5]["loess"]
    assert late.between(0.9, 1.1).all()
    eda = json.loads((out / "eda.json").read_text())
    assert abs(eda["observed_mean_records"] - eda["stationary_expected_records"]) < 0.15
    for name in ("lor.csv", "pr_heatmap.csv", "no_record.csv", "jaccard_pairs.csv", "nt_test.csv",
                 "trend_panel.csv", "conditional_boxplot.csv"):
        assert (out / name).exists(), name


def test_errors_are_json(tmp_path, capsys):
    assert run("frobnicate") == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert set(err) == {"error", "message"}
    assert run("fit", "--out", tmp_path) == 2
    assert "missing required input" in capsys.readouterr().err
    assert run("validate", "--out", tmp_path / "empty", "--table", tmp_path / "nope.npz") != 0
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"n_sims": 3}))
    assert run("ingest", "--config", cfg) == 2
    assert "unknown config keys" in capsys.readouterr().err


def test_config_file_with_flag_override(corpus, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"station_data": str(corpus / "station_data.csv"),
                               "station_meta": str(corpus / "station_meta.csv"),
                               "geofield": [str(corpus / "geofield.csv")], "out_dir": "ignored"}))
    assert run("ingest", "--config", cfg, "--out", tmp_path / "o") == 0
    assert json.loads((tmp_path / "o" / "ingest.json").read_text())["days"] == 16


def test_version_flag():
    res = subprocess.run([sys.executable, "-m", "txrecords.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("txrecords ")
