import csv
import json

import pytest

from rdadapt.cli import EXIT_DIVERGED, EXIT_USAGE, main


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def last_error_line(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    return err[0]


def test_certify(tmp_path, capsys):
    assert main(["certify", "--lambda-bar", "0.1", "--epsilon", "0", "--out-dir", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    line = next(l for l in out.splitlines() if l.startswith("gamma_star"))
    assert float(line.split("=")[1]) == pytest.approx(0.1533, abs=1e-4)
    bounds = json.loads((tmp_path / "bounds.json").read_text())
    assert bounds["eps_star"] == pytest.approx(0.0678, abs=1e-4)
    config = json.loads((tmp_path / "config").read_text())
    assert config["lambda_bar"] == 0.1 and config["command"] == "certify"


def test_certify_infinite_values_reported(tmp_path, capsys):
    assert main(["certify", "--lambda-bar", "50", "--out-dir", str(tmp_path)]) == 0
    assert "l_bar = inf" in capsys.readouterr().out


def test_certify_gamma_star_error(tmp_path, capsys):
    code = main(["certify", "--lambda-bar", "0.1", "--epsilon", "5", "--out-dir", str(tmp_path)])
    assert code == 1
    assert last_error_line(capsys).startswith("error kind=gamma-star-nonpositive")


def test_usage_errors(tmp_path, capsys):
    assert main(["simulate", "--kernel", "neural-operator", "--out-dir", str(tmp_path)]) == EXIT_USAGE
    assert last_error_line(capsys).startswith("error kind=usage")
    assert main(["frobnicate"]) == EXIT_USAGE
    assert last_error_line(capsys).startswith("error kind=usage")
    assert main(["bench", "--out-dir", str(tmp_path)]) == EXIT_USAGE


def test_missing_model_file(tmp_path, capsys):
    code = main(["simulate", "--kernel", "neural-operator", "--model", str(tmp_path / "none.bin"),
                 "--out-dir", str(tmp_path / "o")])
    assert code == 1
    assert last_error_line(capsys).startswith("error kind=io")


def test_open_loop_diverges(tmp_path, capsys):
    code = main(["simulate", "--kernel", "zero", "--cheb-gamma", "9", "--dx", "0.04",
                 "--dt", "2e-4", "--out-dir", str(tmp_path)])
    assert code == EXIT_DIVERGED
    assert last_error_line(capsys).startswith("error kind=plant-diverged")
    assert (tmp_path / "trajectory.csv").exists()


def test_simulate_exact_outputs(tmp_path):
    code = main(["simulate", "--kernel", "exact-march", "--cheb-gamma", "9", "--dx", "0.1",
                 "--dt", "1e-3", "--T", "0.05", "--sample-stride", "10", "--diag-stride", "10",
                 "--out-dir", str(tmp_path)])
    assert code == 0
    traj = read_csv(tmp_path / "trajectory.csv")
    assert traj[0] == ["t", "x", "u", "lambda_hat", "w_hat"]
    assert len(traj) == 1 + 6 * 11
    diag = read_csv(tmp_path / "diagnostics.csv")
    assert diag[0] == ["t", "V", "Gamma", "norm_u", "norm_w", "control_U", "eps_measured",
                       "delta_k0_sup", "delta_k1_sup"]
    assert len(diag) == 1 + 6
    slices = read_csv(tmp_path / "kernel_slice.csv")
    assert slices[0] == ["t", "y", "k_hat_1y", "k_exact_1y"]
    assert json.loads((tmp_path / "config").read_text())["kernel"] == "exact-march"


def test_pipeline_through_cli(tmp_path, monkeypatch):
    monkeypatch.setenv("RDADAPT_OUTPUT_ROOT", str(tmp_path / "root"))
    assert main(["gen-data", "--dx", "0.1", "--dt", "1e-3", "--T", "0.02", "--trajectories", "2",
                 "--samples", "4", "--out-dir", str(tmp_path / "gen")]) == 0
    assert main(["train", "--dataset", str(tmp_path / "gen" / "dataset"), "--epochs", "2",
                 "--out-dir", str(tmp_path / "train")]) == 0
    report = json.loads((tmp_path / "train" / "train_report.json").read_text())
    assert report["epochs"] == 2
    model = str(tmp_path / "train" / "model.bin")
    assert main(["simulate", "--kernel", "neural-operator", "--model", model, "--dx", "0.1",
                 "--dt", "1e-3", "--T", "0.01", "--cheb-gamma", "9"]) == 0
    runs = list((tmp_path / "root").iterdir())
    assert len(runs) == 1 and runs[0].name.startswith("simulate-")
    assert (runs[0] / "config").exists()
    assert main(["bench", "--model", model, "--dataset", str(tmp_path / "gen" / "dataset"),
                 "--dx", "0.1", "0.05", "--out-dir", str(tmp_path / "bench")]) == 0
    rows = read_csv(tmp_path / "bench" / "bench.csv")
    assert rows[0] == ["dx", "method", "mean_ms", "median_ms", "std_ms", "speedup"]
    assert len(rows) == 5
