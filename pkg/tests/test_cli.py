import csv
import json

import pytest

from codedfl.cli import EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_INFEASIBLE, EXIT_OK, main

SMALL = {
    "n_devices": 6,
    "points_per_device": 40,
    "model_dim": 12,
    "nu_comp": 0.2,
    "nu_link": 0.2,
    "delta_grid": [0.0, 0.2],
    "nmse_targets": [0.05],
    "max_epochs": 400,
}


def write_config(tmp_path, **overrides):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({**SMALL, **overrides}))
    return str(path)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_plan_preset(tmp_path, capsys):
    assert main(["plan", "--paper", "--out", str(tmp_path)]) == EXIT_OK
    report = json.loads((tmp_path / "plan.json").read_text())
    assert 0 < report["redundancy_delta"] <= 0.3
    assert 7200 <= report["expected_aggregate_return"] <= 7201
    manifest = json.loads((tmp_path / "plan.manifest.json").read_text())
    assert manifest["command"] == "plan" and manifest["config"]["c_up"] == 2016
    assert "per_device_load" in capsys.readouterr().out


def test_plan_fixed_delta(tmp_path):
    assert main(["plan", "--paper", "--delta", "0.13", "--out", str(tmp_path)]) == EXIT_OK
    assert json.loads((tmp_path / "plan.json").read_text())["server_parity_count"] == 936


def test_plan_homogeneous_without_parity(tmp_path):
    args = ["plan", "--nu-comp", "0", "--nu-link", "0", "--c-up", "0", "--out", str(tmp_path)]
    assert main(args) == EXIT_OK
    report = json.loads((tmp_path / "plan.json").read_text())
    assert report["per_device_load"] == [300] * 24
    assert report["server_parity_count"] == 0


def test_train_is_deterministic(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "b")]) == EXIT_OK
    first = (tmp_path / "a" / "train.csv").read_bytes()
    assert first == (tmp_path / "b" / "train.csv").read_bytes()
    rows = read_rows(tmp_path / "a" / "train.csv")
    starts = {r["run_id"]: float(r["cumulative_time_s"]) for r in rows if r["epoch"] == "0"}
    assert starts["s0-uncoded"] == 0.0
    assert starts["s0-d0.2"] > 0.0
    manifest = json.loads((tmp_path / "a" / "train.manifest.json").read_text())
    assert manifest["seeds"] == [0] and "s0-d0.2" in manifest["plans"]
    summary = read_rows(tmp_path / "a" / "train_summary.csv")
    assert {float(r["delta"]) for r in summary} == {0.0, 0.2}


def test_histogram_outputs(tmp_path):
    cfg = write_config(tmp_path, histogram_epochs=200, histogram_bins=10)
    for sub in ("a", "b"):
        assert main(["histogram", "--config", cfg, "--out", str(tmp_path / sub)]) == EXIT_OK
    a = (tmp_path / "a" / "histogram.csv").read_bytes()
    assert a == (tmp_path / "b" / "histogram.csv").read_bytes()
    rows = read_rows(tmp_path / "a" / "histogram.csv")
    for mode in ("uncoded", "coded"):
        assert sum(int(r["count"]) for r in rows if r["mode"] == mode) == 200
    summary = json.loads((tmp_path / "a" / "histogram.manifest.json").read_text())["summary"]
    assert summary["0.2"]["uncoded_p95"] > summary["0.2"]["t_star"]


def test_histogram_homogeneous_case_nearly_coincides(tmp_path):
    cfg = write_config(tmp_path, nu_comp=0.0, nu_link=0.0, erasure_prob=0.0,
                       delta_grid=[0.1], histogram_epochs=200)
    assert main(["histogram", "--config", cfg, "--out", str(tmp_path)]) == EXIT_OK
    summary = json.loads((tmp_path / "histogram.manifest.json").read_text())["summary"]["0.1"]
    assert summary["coded_p95"] == pytest.approx(summary["uncoded_p95"], rel=0.2)


def test_small_sweep(tmp_path):
    cfg = write_config(tmp_path, nu_grid=[0.0, 0.2])
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path)]) == EXIT_OK
    surface = read_rows(tmp_path / "sweep_surface.csv")
    assert len(surface) == 4
    assert all(float(r["best_delta"]) == 0.2 for r in surface)
    gains = read_rows(tmp_path / "sweep_gain_vs_load.csv")
    assert len(gains) == 8
    unc = [r for r in gains if float(r["delta"]) == 0]
    assert all(float(r["gain"]) == 1.0 and float(r["comm_load"]) == 1.0 for r in unc)


def test_config_errors(tmp_path):
    assert main(["plan", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    bad = tmp_path / "bad.json"
    bad.write_text('{"not_a_key": 1}')
    assert main(["plan", "--config", str(bad)]) == EXIT_CONFIG
    assert main(["plan", "--delta", "1.5", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["plan", "--seeds", "0", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_infeasible_plan_exit_code(tmp_path, capsys):
    assert main(["plan", "--c-up", "-1", "--out", str(tmp_path)]) == EXIT_INFEASIBLE
    assert "parity_cap" in capsys.readouterr().err


def test_divergence_exit_code(tmp_path):
    cfg = write_config(tmp_path, learning_rate=50.0, delta_grid=[0.0])
    assert main(["train", "--config", cfg, "--out", str(tmp_path)]) == EXIT_DIVERGENCE
