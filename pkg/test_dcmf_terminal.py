#!/usr/bin/env python3
"""
End-to-end runs of the command-line front end on tiny inputs
"""

import csv
import json
import os

import numpy as np
import pytest

import dcmf_terminal
from dcmf_io import save_matrix
from dcmf_terminal import FAILED_MARKER, main


@pytest.fixture(autouse=True)
def _few_candidates(monkeypatch):
    monkeypatch.setenv("DCMF_N_CANDIDATES", "20")


@pytest.fixture
def run_config(tmp_path):
    r = np.random.default_rng(0)
    save_matrix(str(tmp_path / "x1.csv"), r.uniform(0.1, 1.0, (8, 6)))
    save_matrix(str(tmp_path / "x2.csv"), r.uniform(0.1, 1.0, (8, 3)))
    config = {
        "graph": {
            "entities": [{"id": "users", "size": 8}, {"id": "items", "size": 6}, {"id": "feats", "size": 3}],
            "views": [{"id": "X1", "row": "users", "col": "items", "path": "x1.csv"},
                      {"id": "X2", "row": "users", "col": "feats", "path": "x2.csv"}],
            "center_view": "X1",
        },
        "output_dir": str(tmp_path / "out"),
        "network": {"K": 2},
        "train": {"max_epochs": 3, "learning_rate": 0.01},
        "bo": {"init_count": 2, "step_count": 1},
        "validation": {"folds": 4},
    }
    path = tmp_path / "run.json"
    path.write_text(json.dumps(config))
    return path


def _summary(out_dir):
    with open(os.path.join(out_dir, "summary.json")) as f:
        summary = json.load(f)
    summary.pop("wall_time_seconds")
    return summary


def test_run_writes_reports(run_config, tmp_path):
    assert main(["run", str(run_config)]) == 0
    out = tmp_path / "out"
    for name in ("config.resolved.json", "summary.json", "history.csv", "diagnostics.csv", "weights.npz",
                 "metrics.csv", "embeddings/users.csv", "reconstructions/X2.csv"):
        assert (out / name).exists(), name
    assert not (out / "bo_trace.jsonl").exists()
    assert not (out / FAILED_MARKER).exists()

    summary = _summary(out)
    assert summary["mode"] == "train"
    assert summary["epochs"] <= 3
    assert summary["validation_rmse"] > 0
    assert set(summary["final_losses"]) == {"l_E[users]", "l_E[items]", "l_E[feats]", "l_R[X1]", "l_R[X2]"}
    assert summary["param_count"]["p_u"] == (8 + 6 + 3) * 2
    assert "cmf_baseline" in summary

    with open(out / "metrics.csv") as f:
        assert {row["method"] for row in csv.DictReader(f)} == {"dcmf", "cmf"}


def test_run_is_deterministic(run_config, tmp_path):
    assert main(["run", str(run_config)]) == 0
    first = _summary(tmp_path / "out")
    assert main(["run", str(run_config)]) == 0
    assert _summary(tmp_path / "out") == first


def test_tune_writes_the_trace(run_config, tmp_path):
    assert main(["tune", str(run_config), "--steps", "1", "--init", "2"]) == 0
    out = tmp_path / "out"
    lines = (out / "bo_trace.jsonl").read_text().splitlines()
    assert len(lines) == 3
    assert [json.loads(line)["step"] for line in lines] == [0, 1, 2]
    summary = _summary(out)
    assert summary["mode"] == "tune"
    assert 0 <= summary["best_step"] < 3
    assert set(summary["best_hyperparameters"]) >= {"learning_rate", "K", "activation"}


def test_bad_config_leaves_failed_marker(tmp_path):
    config = tmp_path / "bad.json"
    config.write_text('{"network": {"K": -3}}')
    out = tmp_path / "failed"
    assert main(["run", str(config), "--output", str(out)]) == 1
    assert (out / FAILED_MARKER).exists()
    assert "network.K" in (out / FAILED_MARKER).read_text()


def test_non_numeric_fraction_is_a_config_error(tmp_path):
    config = tmp_path / "bad.json"
    config.write_text('{"network": {"K": 2, "f_k": "half"}}')
    out = tmp_path / "failed"
    assert main(["run", str(config), "--output", str(out)]) == 1
    assert "network.f_k" in (out / FAILED_MARKER).read_text()


def test_unexpected_crash_still_leaves_failed_marker(run_config, tmp_path, monkeypatch):
    def crash(*args, **kwargs):
        raise RuntimeError("worker vanished")

    monkeypatch.setattr(dcmf_terminal, "run_experiment", crash)
    assert main(["run", str(run_config)]) == 1
    marker = (tmp_path / "out" / FAILED_MARKER).read_text()
    assert "RuntimeError" in marker and "worker vanished" in marker


def test_success_clears_stale_marker(run_config, tmp_path):
    out = tmp_path / "out"
    out.mkdir()
    (out / FAILED_MARKER).write_text("old failure\n")
    assert main(["run", str(run_config)]) == 0
    assert not (out / FAILED_MARKER).exists()


def test_eval_rmse(tmp_path):
    save_matrix(str(tmp_path / "truth.csv"), np.array([[1.0, 2.0], [3.0, 4.0]]))
    save_matrix(str(tmp_path / "pred.csv"), np.array([[1.0, 0.0], [3.0, 2.0]]))
    (tmp_path / "test.txt").write_text("2,2\n0,1,1\n1,1,1\n")
    out = tmp_path / "eval"
    assert main(["eval", "--truth", str(tmp_path / "truth.csv"), "--pred", str(tmp_path / "pred.csv"),
                 "--test", str(tmp_path / "test.txt"), "--output", str(out)]) == 0
    with open(out / "metrics.csv") as f:
        rows = list(csv.DictReader(f))
    assert rows[0]["metric"] == "rmse"
    assert float(rows[0]["value"]) == pytest.approx(2.0)


def test_eval_probability_curve(tmp_path):
    save_matrix(str(tmp_path / "truth.csv"), np.zeros((3, 2)))
    save_matrix(str(tmp_path / "pred.csv"), np.array([[0.9, 0.1], [0.5, 0.7], [0.8, 0.3]]))
    (tmp_path / "test.txt").write_text("3,2\n2,0,1\n1,0,1\n")
    (tmp_path / "train.txt").write_text("3,2\n0,0,1\n")
    out = tmp_path / "eval"
    assert main(["eval", "--truth", str(tmp_path / "truth.csv"), "--pred", str(tmp_path / "pred.csv"),
                 "--test", str(tmp_path / "test.txt"), "--train", str(tmp_path / "train.txt"),
                 "--metric", "probability", "--N", "2", "--output", str(out)]) == 0
    with open(out / "metrics.csv") as f:
        values = [float(row["value"]) for row in csv.DictReader(f)]
    assert values == [0.5, 1.0]


def test_synth_size_study(tmp_path):
    out = tmp_path / "synth"
    assert main(["synth", "size", "--output", str(out), "--scale", "0.01", "--k-true", "2", "--K", "2",
                 "--folds", "2", "--evaluate"]) == 0
    summary = _summary(out)
    assert [d["label"] for d in summary["datasets"]] == ["size=x1", "size=x3", "size=x5"]
    assert all(set(d["rmse"]) == {"dcmf", "cmf"} for d in summary["datasets"])
    graph = json.loads((out / "size_x1" / "graph.json").read_text())
    assert graph["center_view"] == "X1"
    assert (out / "size_x1" / "X1.csv").exists()
