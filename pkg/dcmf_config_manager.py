#!/usr/bin/env python3
"""
dCMF Config Manager - Persistent Run Configuration
==================================================

Loads a JSON run configuration, layers it over the defaults (and an optional
named preset), rejects unknown fields with their dotted path and line, and
resolves it into a RunConfig. The resolved settings are saved next to every
run so no default is ever silent.

This program is free software: you can redistribute it and/or modify
it under the terms of the GNU General Public License as published by
the Free Software Foundation, either version 3 of the License, or
(at your option) any later version.
"""

import copy
import json
import logging
import os
import re
from dataclasses import asdict, dataclass, fields
from datetime import datetime
from typing import Any, Dict, Optional, Tuple

from dcmf_autoencoder import ACTIVATIONS
from dcmf_cmf_baseline import CMF_TRAIN
from dcmf_engine import TrainConfig
from dcmf_errors import ConfigParseError, DCMFError
from dcmf_graph_model import RelationGraph
from dcmf_hyperopt import (
    DCMF_SEARCH_SPACE, SIGMA_MODES, SURROGATE_KINDS, SearchSpace, candidate_count,
)
from dcmf_io import load_graph, write_json

logger = logging.getLogger(__name__)

CONFIG_VERSION = "1.0"
MODES = ("train", "tune")

PRESETS: Dict[str, Dict[str, Any]] = {
    "ml100k": {
        "network": {"activation": "tanh", "f_k": 0.01, "K": 200},
        "train": {"batch_count": 2, "pretrain": True, "learning_rate": 1e-4, "convergence_threshold": 1e-5},
    },
    "gda": {
        "network": {"activation": "tanh", "f_k": 0.6, "K": 100},
        "train": {"batch_count": 1, "pretrain": False, "learning_rate": 2e-4, "convergence_threshold": 6e-4},
    },
}

# sections whose keys are free-form (checked elsewhere)
_OPEN_SECTIONS = {"graph", "search_space"}


def _train_defaults() -> Dict[str, Any]:
    return {f.name: f.default for f in fields(TrainConfig) if f.name != "seed"}


def _cmf_train_defaults() -> Dict[str, Any]:
    return {k: getattr(CMF_TRAIN, k) for k in ("learning_rate", "convergence_threshold", "max_epochs", "patience")}


@dataclass
class RunConfig:
    """Fully resolved run: graph, mode, training or search settings, outputs"""
    graph: Optional[RelationGraph]
    mode: str
    network: Dict[str, Any]
    train: TrainConfig
    search_space: SearchSpace
    bo: Dict[str, Any]
    validation: Dict[str, Any]
    cmf: Dict[str, Any]
    output_dir: str
    seed: int
    preset: Optional[str]
    resolved: Dict[str, Any]
    cmf_train: TrainConfig = CMF_TRAIN


class DCMFConfigManager:
    """Manages persistent run configurations for dCMF experiments"""

    def __init__(self, config_file: str = "dcmf_run.json"):
        self.config_file = config_file
        self.default_config = {
            "graph": None,
            "mode": "train",
            "preset": None,
            "seed": 0,
            "output_dir": "dcmf_output",
            "network": {"K": 100, "f_k": 0.5, "activation": "tanh", "scale": False},
            "train": _train_defaults(),
            "search_space": copy.deepcopy(DCMF_SEARCH_SPACE),
            "bo": {
                "init_count": 10,
                "step_count": 200,
                "surrogate_kind": "mtgp",
                "sigma_mode": "sum_std",
                "n_candidates": 1000,
                "refit_every": 1,
            },
            "validation": {"folds": 5, "fold": 0, "test_size": None},
            "cmf": {"enabled": True, "lam": 0.0, "K": None, "train": _cmf_train_defaults()},
            "resolved_at": None,
            "version": CONFIG_VERSION,
        }

    # ------------------------------------------------------------- loading

    def read_raw(self, path: Optional[str] = None) -> Tuple[Dict, str]:
        path = path or self.config_file
        try:
            with open(path, "r", encoding="utf-8") as f:
                text = f.read()
        except OSError as err:
            raise ConfigParseError(f"cannot read config: {err.strerror or err}") from err
        try:
            data = json.loads(text)
        except json.JSONDecodeError as err:
            raise ConfigParseError(f"invalid JSON: {err.msg}", "", err.lineno) from err
        if not isinstance(data, dict):
            raise ConfigParseError("top level must be an object", "", 1)
        return data, text

    def load_config(self, path: Optional[str] = None, preset: Optional[str] = None,
                    overrides: Optional[Dict[str, Any]] = None, load_views: bool = True) -> RunConfig:
        """Defaults <- preset <- file <- overrides, then validated and resolved"""
        path = path or self.config_file
        data, text = self.read_raw(path)
        self._check_keys(data, self.default_config, "", text)

        preset = preset or data.get("preset")
        merged = copy.deepcopy(self.default_config)
        if preset is not None:
            if preset not in PRESETS:
                raise ConfigParseError(f"unknown preset '{preset}', expected one of {sorted(PRESETS)}",
                                       "preset", _line_of(text, "preset"))
            _merge(merged, PRESETS[preset])
        _merge(merged, data)
        if overrides:
            _merge(merged, overrides)
        merged["preset"] = preset
        merged["bo"]["n_candidates"] = candidate_count(merged["bo"]["n_candidates"])

        cfg = self.resolve(merged, base_dir=os.path.dirname(os.path.abspath(path)), text=text,
                           load_views=load_views)
        logger.info("loaded run configuration %s (mode=%s, preset=%s)", path, cfg.mode, preset)
        return cfg

    def _check_keys(self, data: Dict, reference: Dict, prefix: str, text: str):
        for key, value in data.items():
            dotted = f"{prefix}.{key}" if prefix else key
            if key not in reference:
                raise ConfigParseError(f"unknown field '{key}'", dotted, _line_of(text, key))
            if key in _OPEN_SECTIONS:
                continue
            if isinstance(reference[key], dict) and isinstance(value, dict):
                self._check_keys(value, reference[key], dotted, text)

    def resolve(self, merged: Dict[str, Any], base_dir: str = ".", text: str = "",
                load_views: bool = True) -> RunConfig:
        def fail(message: str, dotted: str):
            raise ConfigParseError(message, dotted, _line_of(text, dotted.split(".")[-1]) if text else None)

        mode = merged["mode"]
        if mode not in MODES:
            fail(f"mode must be one of {MODES}", "mode")
        seed = merged["seed"]
        if not _is_int(seed) or seed < 0:
            fail("seed must be a non-negative integer", "seed")

        def number(value: Any, dotted: str) -> float:
            if isinstance(value, bool):
                fail("expected a number", dotted)
            try:
                return float(value)
            except (TypeError, ValueError):
                fail(f"expected a number, got {value!r}", dotted)

        network = merged["network"]
        if not _is_int(network["K"]) or network["K"] < 1:
            fail("K must be a positive integer", "network.K")
        network["f_k"] = number(network["f_k"], "network.f_k")
        if not 0.0 < network["f_k"] < 1.0:
            fail("f_k must lie in (0, 1)", "network.f_k")
        if network["activation"] not in ACTIVATIONS:
            fail(f"activation must be one of {sorted(ACTIVATIONS)}", "network.activation")

        try:
            train = TrainConfig(seed=seed, **merged["train"])
        except (DCMFError, TypeError, ValueError) as err:
            fail(str(err), "train")

        cmf = merged["cmf"]
        cmf["lam"] = number(cmf["lam"], "cmf.lam")
        if cmf["lam"] < 0:
            fail("lam must be non-negative", "cmf.lam")
        if cmf["K"] is not None and (not _is_int(cmf["K"]) or cmf["K"] < 1):
            fail("K must be a positive integer or null", "cmf.K")
        try:
            cmf_train = TrainConfig(seed=seed, **cmf["train"])
        except (DCMFError, TypeError, ValueError) as err:
            fail(str(err), "cmf.train")

        try:
            space = SearchSpace.from_dict(merged["search_space"])
        except (DCMFError, AttributeError, TypeError) as err:
            fail(str(err), "search_space")

        bo = merged["bo"]
        if bo["surrogate_kind"] not in SURROGATE_KINDS:
            fail(f"surrogate_kind must be one of {SURROGATE_KINDS}", "bo.surrogate_kind")
        if bo["sigma_mode"] not in SIGMA_MODES:
            fail(f"sigma_mode must be one of {SIGMA_MODES}", "bo.sigma_mode")
        if not _is_int(bo["init_count"]) or bo["init_count"] < 2:
            fail("init_count must be an integer >= 2", "bo.init_count")
        if not _is_int(bo["step_count"]) or bo["step_count"] < 0:
            fail("step_count must be a non-negative integer", "bo.step_count")

        validation = merged["validation"]
        if validation["folds"] is not None and (not _is_int(validation["folds"]) or validation["folds"] < 2):
            fail("folds must be an integer >= 2 (or null to train on everything)", "validation.folds")

        graph = None
        if merged["graph"] is None:
            if load_views:
                fail("a graph is required", "graph")
        elif load_views:
            graph = load_graph(merged["graph"], base_dir)

        resolved = copy.deepcopy(merged)
        resolved["search_space"] = space.as_dict()
        return RunConfig(graph, mode, dict(network), train, space, dict(bo), dict(validation),
                         dict(cmf), merged["output_dir"], seed, merged["preset"], resolved, cmf_train)

    # ------------------------------------------------------------- saving

    def save_config(self, cfg: RunConfig, path: Optional[str] = None) -> bool:
        """Write the resolved configuration with a timestamp and version"""
        data = copy.deepcopy(cfg.resolved)
        data["train"] = {k: v for k, v in asdict(cfg.train).items() if k != "seed"}
        data["resolved_at"] = datetime.now().isoformat()
        data["version"] = CONFIG_VERSION
        try:
            write_json(path or self.config_file, data)
        except OSError as err:
            logger.error("could not save configuration: %s", err)
            return False
        return True


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _merge(base: Dict, update: Dict):
    for key, value in update.items():
        if key not in _OPEN_SECTIONS and isinstance(base.get(key), dict) and isinstance(value, dict):
            _merge(base[key], value)
        else:
            base[key] = copy.deepcopy(value)


def _line_of(text: str, key: str) -> Optional[int]:
    """1-based line of the first '"key":' in the raw JSON text"""
    pattern = re.compile(r'"' + re.escape(key) + r'"\s*:')
    for number, line in enumerate(text.splitlines(), start=1):
        if pattern.search(line):
            return number
    return None
