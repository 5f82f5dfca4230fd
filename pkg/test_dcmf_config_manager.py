#!/usr/bin/env python3
"""
Tests for run configuration loading, layering and saving
"""

import json

import numpy as np
import pytest

from dcmf_cmf_baseline import CMF_TRAIN
from dcmf_config_manager import CONFIG_VERSION, PRESETS, DCMFConfigManager
from dcmf_errors import ConfigParseError
from dcmf_io import save_matrix


@pytest.fixture(autouse=True)
def _no_candidate_override(monkeypatch):
    monkeypatch.delenv("DCMF_N_CANDIDATES", raising=False)


def _write(tmp_path, text):
    path = tmp_path / "run.json"
    path.write_text(text if isinstance(text, str) else json.dumps(text, indent=4))
    return str(path)


def test_defaults_fill_missing_sections(tmp_path):
    cfg = DCMFConfigManager().load_config(_write(tmp_path, {"mode": "tune"}), load_views=False)
    assert cfg.mode == "tune"
    assert cfg.network["K"] == 100
    assert cfg.train.learning_rate == 1e-3
    assert cfg.train.patience == 1
    assert cfg.bo["surrogate_kind"] == "mtgp"
    assert cfg.search_space.names[0] == "learning_rate"
    assert cfg.graph is None


def test_unknown_field_reports_path_and_line(tmp_path):
    text = '{\n    "mode": "train",\n    "train": {\n        "learning_rate": 0.01,\n        "lr_decay": 0.5\n    }\n}\n'
    with pytest.raises(ConfigParseError) as err:
        DCMFConfigManager().load_config(_write(tmp_path, text), load_views=False)
    assert err.value.field_path == "train.lr_decay"
    assert err.value.line == 5


def test_invalid_json_reports_line(tmp_path):
    with pytest.raises(ConfigParseError) as err:
        DCMFConfigManager().load_config(_write(tmp_path, '{\n  "mode": \n}'), load_views=False)
    assert err.value.line == 3


def test_preset_is_layered_under_the_file(tmp_path):
    path = _write(tmp_path, {"preset": "gda", "network": {"K": 20}})
    cfg = DCMFConfigManager().load_config(path, load_views=False)
    assert cfg.preset == "gda"
    assert cfg.network["K"] == 20
    assert cfg.network["f_k"] == PRESETS["gda"]["network"]["f_k"]
    assert cfg.train.convergence_threshold == 6e-4


def test_overrides_win(tmp_path):
    path = _write(tmp_path, {"seed": 3, "train": {"max_epochs": 7}})
    cfg = DCMFConfigManager().load_config(path, preset="ml100k", overrides={"train": {"max_epochs": 2}, "seed": 9},
                                          load_views=False)
    assert cfg.train.max_epochs == 2
    assert cfg.train.seed == 9
    assert cfg.train.batch_count == 2


@pytest.mark.parametrize("data, field", [
    ({"mode": "predict"}, "mode"),
    ({"seed": -1}, "seed"),
    ({"network": {"K": 0}}, "network.K"),
    ({"network": {"f_k": 1.0}}, "network.f_k"),
    ({"network": {"f_k": "half"}}, "network.f_k"),
    ({"network": {"K": 2.5}}, "network.K"),
    ({"network": {"activation": "softplus"}}, "network.activation"),
    ({"train": {"learning_rate": -1.0}}, "train"),
    ({"train": {"learning_rate": "fast"}}, "train"),
    ({"cmf": {"lam": -1}}, "cmf.lam"),
    ({"cmf": {"K": 0}}, "cmf.K"),
    ({"cmf": {"train": {"patience": 0}}}, "cmf.train"),
    ({"bo": {"surrogate_kind": "tpe"}}, "bo.surrogate_kind"),
    ({"bo": {"init_count": 1}}, "bo.init_count"),
    ({"validation": {"folds": 1}}, "validation.folds"),
    ({"search_space": {"K": {"kind": "integer", "bounds": [5, 1]}}}, "search_space"),
    ({"preset": "imdb"}, "preset"),
])
def test_invalid_values_are_rejected(tmp_path, data, field):
    with pytest.raises(ConfigParseError) as err:
        DCMFConfigManager().load_config(_write(tmp_path, data), load_views=False)
    assert err.value.field_path == field


def test_cmf_training_has_its_own_stopping_rule(tmp_path):
    cfg = DCMFConfigManager().load_config(_write(tmp_path, {"seed": 4}), load_views=False)
    assert cfg.cmf_train.patience == CMF_TRAIN.patience
    assert cfg.cmf_train.convergence_threshold == CMF_TRAIN.convergence_threshold
    assert cfg.cmf_train.seed == 4

    tuned = DCMFConfigManager().load_config(_write(tmp_path, {"cmf": {"train": {"max_epochs": 7}}}),
                                            load_views=False)
    assert tuned.cmf_train.max_epochs == 7
    assert tuned.cmf_train.learning_rate == CMF_TRAIN.learning_rate


def test_graph_is_required_when_loading_views(tmp_path):
    with pytest.raises(ConfigParseError) as err:
        DCMFConfigManager().load_config(_write(tmp_path, {}))
    assert err.value.field_path == "graph"


def test_graph_paths_resolve_against_the_config(tmp_path):
    save_matrix(str(tmp_path / "x1.csv"), np.ones((3, 2)))
    graph = {"entities": [{"id": "u", "size": 3}, {"id": "i", "size": 2}],
             "views": [{"id": "X1", "row": "u", "col": "i", "path": "x1.csv"}], "center_view": "X1"}
    cfg = DCMFConfigManager().load_config(_write(tmp_path, {"graph": graph}))
    assert cfg.graph.view("X1").data.shape == (3, 2)


def test_candidate_count_environment_overrides_config(tmp_path, monkeypatch):
    monkeypatch.setenv("DCMF_N_CANDIDATES", "16")
    cfg = DCMFConfigManager().load_config(_write(tmp_path, {"bo": {"n_candidates": 500}}), load_views=False)
    assert cfg.bo["n_candidates"] == 16


def test_save_config_stamps_version(tmp_path):
    manager = DCMFConfigManager()
    cfg = manager.load_config(_write(tmp_path, {"train": {"weight_decay": 0.01}}), load_views=False)
    out = tmp_path / "out" / "config.resolved.json"
    assert manager.save_config(cfg, str(out))
    saved = json.loads(out.read_text())
    assert saved["version"] == CONFIG_VERSION
    assert saved["resolved_at"]
    assert saved["train"]["weight_decay"] == 0.01
    assert "seed" not in saved["train"]

    reloaded = manager.load_config(str(out), load_views=False)
    assert reloaded.train == cfg.train
