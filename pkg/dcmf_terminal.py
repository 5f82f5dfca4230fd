#!/usr/bin/env python3
"""
dCMF Terminal - Experiment Runner
=================================

Command-line front end for deep collective matrix factorization:

    run   CONFIG     train dCMF with fixed hyperparameters and complete the views
    tune  CONFIG     Bayesian-optimize the hyperparameters, keep the best network
    synth PRESET     generate the sparsity / size / shape synthetic studies
    eval             score predictions against truth (RMSE, Recall@N, probability@N)

Every run writes its reports to one output directory; a FAILED marker and a
nonzero exit status signal that the run did not complete.

This program is free software: you can redistribute it and/or modify
it under the terms of the GNU General Public License as published by
the Free Software Foundation, either version 3 of the License, or
(at your option) any later version.
"""

import argparse
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from dcmf_bench import (
    PRESETS as SYNTH_PRESETS, MetricRecord, SyntheticDataset, build_preset, cross_validate,
    hidden_pair_ranks, make_cv_folds, make_dcmf_objective, mean_recall_at_n, probability_at_n, rmse,
    split_params,
)
from dcmf_cmf_baseline import CMF_TRAIN, cmf_reconstruct, cmf_train
from dcmf_config_manager import PRESETS as RUN_PRESETS, DCMFConfigManager, RunConfig
from dcmf_engine import (
    DCMFNetwork, TaskLossVector, TrainConfig, build_network, embeddings, param_count, reconstruct_all, train,
)
from dcmf_errors import DCMFError
from dcmf_graph_model import entity_diagnostics
from dcmf_hyperopt import BOStep, default_search_space, run_bo
from dcmf_io import (
    atomic_write_text, load_matrix, save_matrix, save_weights, write_json,
    write_records_csv,
)
from dcmf_numerics import to_dense

logger = logging.getLogger("dcmf")

FAILED_MARKER = "FAILED"


@dataclass
class ReportBundle:
    """Files a run wrote and the summary record it ended with"""
    output_dir: str
    files: List[str] = field(default_factory=list)
    summary: Dict[str, Any] = field(default_factory=dict)

    def path(self, *parts: str) -> str:
        target = os.path.join(self.output_dir, *parts)
        self.files.append(os.path.relpath(target, self.output_dir))
        return target


def show_header():
    """Display the run banner"""
    print("\n" + "═" * 80)
    print("🧬" + " " * 22 + "dCMF ~ Deep Collective Matrix Factorization" + " " * 13 + "🧬")
    print(" " * 20 + "Autoencoders over arbitrary collections of matrices")
    print("═" * 80)
    print("📄 License: GNU General Public License v3.0")
    print("═" * 80)


def show_config(cfg: RunConfig):
    """Display the resolved settings that shape this run"""
    net = cfg.network
    print(f"\n🔧 Mode: {cfg.mode}   Preset: {cfg.preset or 'none'}   Seed: {cfg.seed}")
    print(f"   🧠 K={net['K']}  f_k={net['f_k']}  activation={net['activation']}  scale={net['scale']}")
    t = cfg.train
    print(f"   📉 lr={t.learning_rate:g}  batches={t.batch_count}  threshold={t.convergence_threshold:g}  "
          f"max_epochs={t.max_epochs}  pretrain={t.pretrain}  optimizer={t.optimizer}")
    if cfg.mode == "tune":
        bo = cfg.bo
        print(f"   🎯 surrogate={bo['surrogate_kind']}  m={bo['init_count']}  n={bo['step_count']}  "
              f"candidates={bo['n_candidates']}")
    print(f"   💾 Output: {cfg.output_dir}")


def show_diagnostics(net: DCMFNetwork):
    print("\n📐 Entity diagnostics")
    print("-" * 80)
    print("Entity       |   Size |      p x q      | N_e | Sparsity | Layers")
    print("-" * 80)
    for e in net.graph.entity_ids:
        d = entity_diagnostics(net.graph, e)
        layers = "-".join(str(s) for s in net.autoencoder(e).plan.encoder_sizes)
        print(f"{e:<12} | {d.size:>6} | {d.shape[0]:>6} x {d.shape[1]:<6} | {d.interactions:>3} | "
              f"{d.sparsity:>8.3f} | {layers}")
        if d.risk != "balanced":
            print(f"   ⚠️  {e}: {d.risk}")
    print("-" * 80)


def show_history(history: Sequence[TaskLossVector], every: int = 10):
    if not history:
        return
    print("\nEpoch  | Total L    | " + " | ".join(f"{n:<10}" for n in history[0].names))
    print("-" * 80)
    for i, losses in enumerate(history):
        if i % every == 0 or i == len(history) - 1:
            print(f"{losses.epoch:>6} | {losses.scalar():>10.5f} | "
                  + " | ".join(f"{v:>10.5f}" for v in losses.as_array()))


def show_step(step: BOStep):
    status = "❌ failed" if step.failed else f"{step.scalar:>10.5f}"
    validation = f"{step.validation:.5f}" if step.validation is not None else "-"
    acquisition = f"{step.acquisition:.3g}" if step.acquisition is not None else "-"
    print(f"{step.index:>5} | {step.phase:<6} | {status} | {validation:>9} | {acquisition:>9} | {step.wall_time:>6.1f}s")


def show_statistics(records: Sequence[MetricRecord]):
    """Mean and spread of each method's per-fold metric"""
    if not records:
        return
    print("\n📊 Cross-validation summary:")
    keys = sorted({(r.label, r.method, r.metric) for r in records})
    for label, method, metric in keys:
        values = [r.value for r in records if (r.label, r.method, r.metric) == (label, method, metric)]
        spread = f" ± {np.std(values):.5f}" if len(values) > 1 else ""
        print(f"   {label or 'run':<20} {method:<6} {metric}: {np.mean(values):.5f}{spread}  ({len(values)} folds)")


# ------------------------------------------------------------------ reports

def _holdout(cfg: RunConfig):
    """Fold of the center view held out for validation, or None"""
    graph = cfg.graph
    folds = cfg.validation.get("folds")
    if graph.center_view is None or not folds:
        return None
    fold_set = make_cv_folds(graph.view(graph.center_view).data, folds, seed=cfg.seed,
                             test_size=cfg.validation.get("test_size"))
    index = cfg.validation.get("fold", 0) % fold_set.k
    return fold_set[index]


def write_network_reports(bundle: ReportBundle, net: DCMFNetwork, history: Sequence[TaskLossVector]):
    for entity, U in embeddings(net).items():
        save_matrix(bundle.path("embeddings", f"{entity}.csv"), U)
    for view_id, X in reconstruct_all(net).items():
        save_matrix(bundle.path("reconstructions", f"{view_id}.csv"), X)
    save_weights(bundle.path("weights.npz"),
                 {e: ae.weights for e, ae in net.autoencoders.items()},
                 {e: {"input_dim": ae.plan.input_dim, "encoder": list(ae.plan.encoder_sizes),
                      "decoder": list(ae.plan.decoder_sizes), "activation": ae.plan.activation}
                  for e, ae in net.autoencoders.items()})
    write_records_csv(bundle.path("history.csv"), [h.as_record() for h in history])
    write_records_csv(bundle.path("diagnostics.csv"),
                      [entity_diagnostics(net.graph, e).as_record() for e in net.graph.entity_ids])


def write_summary(bundle: ReportBundle, summary: Dict[str, Any], wall_time: float):
    """summary.json; wall time is the only field that varies between identical runs"""
    summary["wall_time_seconds"] = round(wall_time, 3)
    bundle.summary = summary
    write_json(bundle.path("summary.json"), summary)


def _cmf_baseline(cfg: RunConfig, fold) -> Optional[Dict[str, Any]]:
    if not cfg.cmf.get("enabled") or fold is None:
        return None
    graph = cfg.graph
    K = cfg.cmf.get("K") or cfg.network["K"]
    factors = cmf_train(graph, K, cfg.cmf.get("lam", 0.0), cfg.cmf_train,
                        validation_mask=fold.mask(graph.center_view))
    truth = graph.view(graph.center_view).data
    return {"K": K, "lam": cfg.cmf.get("lam", 0.0), "epochs": len(factors.history),
            "test_rmse": rmse(truth, cmf_reconstruct(factors, graph.center_view), fold.test)}


def _plot_history(path: str, history: Sequence[TaskLossVector]):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8, 5))
    epochs = [h.epoch for h in history]
    ax.plot(epochs, [h.scalar() for h in history], label="total", linewidth=2)
    for i, name in enumerate(history[0].names):
        ax.plot(epochs, [h.as_array()[i] for h in history], label=name, alpha=0.7)
    ax.set_xlabel("epoch")
    ax.set_ylabel("RMS loss")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _plot_trace(path: str, steps: Sequence[BOStep]):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    scalars = np.array([s.scalar for s in steps])
    fig, ax = plt.subplots(figsize=(8, 5))
    ax.plot(np.where(np.isfinite(scalars), scalars, np.nan), "o", markersize=3, label="‖L‖₁")
    ax.plot(np.minimum.accumulate(scalars), label="best so far")
    validation = [s.validation if s.validation is not None else np.nan for s in steps]
    ax.plot(validation, "x", markersize=3, label="held-out RMSE")
    ax.set_xlabel("step")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _plot_study(path: str, entries: Sequence[Dict[str, Any]]):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = [e["label"] for e in entries]
    x = np.arange(len(labels))
    fig, ax = plt.subplots(figsize=(8, 5))
    for offset, method in ((-0.2, "dcmf"), (0.2, "cmf")):
        ax.bar(x + offset, [e["rmse"][method] for e in entries], width=0.4, label=method)
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=15)
    ax.set_ylabel("mean test RMSE")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _plot_probability(path: str, curve: np.ndarray):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8, 5))
    ax.plot(np.arange(1, curve.size + 1), curve)
    ax.set_xlabel("N")
    ax.set_ylabel("probability@N")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# ------------------------------------------------------------------ subcommands

def run_experiment(cfg: RunConfig, plots: bool = False,
                   manager: Optional[DCMFConfigManager] = None) -> ReportBundle:
    """Train (or tune then train) dCMF and write every report to the output directory"""
    started = time.perf_counter()
    bundle = ReportBundle(cfg.output_dir)
    os.makedirs(cfg.output_dir, exist_ok=True)
    (manager or DCMFConfigManager()).save_config(cfg, bundle.path("config.resolved.json"))

    graph = cfg.graph
    fold = _holdout(cfg)
    mask = fold.mask(graph.center_view) if fold is not None else []
    summary: Dict[str, Any] = {"mode": cfg.mode, "config": {k: v for k, v in cfg.resolved.items() if k != "resolved_at"}}

    if cfg.mode == "tune":
        print("\n🎯 Bayesian optimization")
        print("-" * 80)
        print(" Step | Phase  |   ‖L‖₁     | Held-out  |    EI     |  Time")
        print("-" * 80)
        objective = make_dcmf_objective(graph, mask, cfg.network, cfg.train, fold.test if fold else None)
        bo = cfg.bo
        result = run_bo(objective, cfg.search_space, bo["init_count"], bo["step_count"], bo["surrogate_kind"],
                        cfg.seed, n_candidates=bo["n_candidates"], sigma_mode=bo["sigma_mode"],
                        refit_every=bo["refit_every"], callback=show_step)
        atomic_write_text(bundle.path("bo_trace.jsonl"), result.trace.to_jsonl())
        if plots:
            _plot_trace(bundle.path("bo_trace.png"), result.trace.steps)
        best_step = result.trace.steps[result.best_index]
        print(f"\n✅ Best step {best_step.index}: {result.best}")
        network_kwargs, train_cfg = split_params(result.best, cfg.network, cfg.train)
        net, history, validation = result.best_payload
        validation = best_step.validation if best_step.validation is not None else validation
        summary["best_hyperparameters"] = result.best
        summary["best_step"] = result.best_index
        summary["steps"] = len(result.trace)
    else:
        network_kwargs, train_cfg = dict(cfg.network), cfg.train
        net = build_network(graph, **network_kwargs)
        show_diagnostics(net)
        print("\n🚀 Training dCMF...")
        result = train(net, train_cfg, validation_mask=mask)
        net, history, validation = result.network, result.history, result.validation_rmse

    show_history(history)
    write_network_reports(bundle, net, history)
    if plots:
        _plot_history(bundle.path("history.png"), history)

    final = history[-1]
    summary.update({
        "epochs": len(history),
        "final_losses": dict(zip(final.names, final.as_array().tolist())),
        "final_total": final.scalar(),
        "validation_rmse": validation,
        "network": dict(network_kwargs, K=net.K, f_k=net.f_k, activation=net.activation),
        "train": asdict(train_cfg),
        "param_count": param_count(net)._asdict(),
    })
    baseline = _cmf_baseline(cfg, fold)
    if baseline is not None:
        summary["cmf_baseline"] = baseline
        truth = graph.view(graph.center_view).data
        dcmf_test = rmse(truth, reconstruct_all(net)[graph.center_view], fold.test)
        summary["dcmf_test_rmse"] = dcmf_test
        fold_index = cfg.validation.get("fold", 0)
        write_records_csv(bundle.path("metrics.csv"), [
            MetricRecord("rmse", None, fold_index, dcmf_test, "dcmf").as_record(),
            MetricRecord("rmse", None, fold_index, baseline["test_rmse"], "cmf").as_record(),
        ])

    write_summary(bundle, summary, time.perf_counter() - started)
    print(f"\n✅ Final L = {final.scalar():.5f} after {len(history)} epochs")
    if validation is not None:
        print(f"   🎯 Held-out RMSE: {validation:.5f}")
    if baseline is not None:
        print(f"   📏 CMF baseline RMSE: {baseline['test_rmse']:.5f}")
    return bundle


def run_synth(preset: str, output_dir: str, scale: float, k_true: int, seed: int, folds: int,
              evaluate: bool, tune: bool, test_size: Optional[int], K: int, step_count: int, init_count: int,
              folds_parallel: bool, plots: bool) -> ReportBundle:
    """Generate a synthetic study; optionally cross-validate dCMF against CMF on it"""
    started = time.perf_counter()
    bundle = ReportBundle(output_dir)
    datasets: List[SyntheticDataset] = build_preset(preset, scale, k_true, seed)
    manager = DCMFConfigManager()
    base_network = {k: v for k, v in manager.default_config["network"].items()}
    base_network["K"] = K
    base_train = TrainConfig(seed=seed)
    records: List[MetricRecord] = []
    summary: Dict[str, Any] = {"preset": preset, "scale": scale, "K_true": k_true, "seed": seed, "datasets": []}

    # sparsity levels share one test set through the sparsest support
    support = datasets[-1].center if preset == "sparsity" else None
    for ds in datasets:
        name = ds.label.replace("=", "_")
        print(f"\n📦 {ds.label}: sizes={ds.spec.sizes}")
        graph_views = []
        for v in ds.graph.views:
            rel = os.path.join(name, f"{v.id}.csv")
            save_matrix(bundle.path(rel), v.data)
            graph_views.append({"id": v.id, "row": v.row_entity, "col": v.col_entity, "path": f"{v.id}.csv",
                                "format": "dense-csv", "datatype": v.datatype})
        write_json(bundle.path(name, "graph.json"), {
            "entities": [{"id": e.id, "size": e.size} for e in ds.graph.entities],
            "views": graph_views, "center_view": ds.graph.center_view})
        entry = {"label": ds.label, "sizes": list(ds.spec.sizes), "sparsity": ds.spec.sparsity}

        if evaluate or tune:
            fold_set = make_cv_folds(ds.center, folds, seed=seed, test_size=test_size,
                                     support=support)
            hyperparams: Dict[str, Any] = {}
            if tune:
                view_id = ds.graph.center_view
                objective = make_dcmf_objective(ds.graph, fold_set[0].mask(view_id), base_network, base_train,
                                                fold_set[0].test)
                result = run_bo(objective, default_search_space(),
                                init_count, step_count, "mtgp", seed, callback=show_step)
                atomic_write_text(bundle.path(name, "bo_trace.jsonl"), result.trace.to_jsonl())
                hyperparams = result.best
                entry["best_hyperparameters"] = hyperparams
            dcmf_params = {"network": base_network, "train": base_train, "hyperparams": hyperparams}
            cmf_params = {"K": hyperparams.get("K", K), "lam": 0.0, "train": replace(CMF_TRAIN, seed=seed)}
            fold_records = cross_validate(ds.graph, fold_set, dcmf_params, cmf_params, ds.label,
                                          parallel=folds_parallel)
            records.extend(fold_records)
            entry["rmse"] = {m: float(np.mean([r.value for r in fold_records if r.method == m]))
                             for m in ("dcmf", "cmf")}
        summary["datasets"].append(entry)

    if records:
        write_records_csv(bundle.path("metrics.csv"), [r.as_record() for r in records])
        show_statistics(records)
        if plots:
            _plot_study(bundle.path("rmse_by_dataset.png"), summary["datasets"])
    write_summary(bundle, summary, time.perf_counter() - started)
    return bundle


def _coords(matrix) -> List:
    """Listed triples of a sparse file (explicit zeros included), else the non-zeros"""
    if sp.issparse(matrix):
        coo = matrix.tocoo()
        rows, cols = coo.row, coo.col
    else:
        rows, cols = np.nonzero(to_dense(matrix))
    return sorted(zip(rows.tolist(), cols.tolist()))


def run_eval(truth_path: str, pred_path: str, test_path: str, output_dir: str, metric: str, N: int,
             train_path: Optional[str], fmt: str, plots: bool) -> ReportBundle:
    """Score a prediction file against truth on the test coordinates"""
    started = time.perf_counter()
    bundle = ReportBundle(output_dir)
    truth = load_matrix(truth_path, fmt)
    pred = load_matrix(pred_path, "dense-csv")
    test = load_matrix(test_path, "sparse-triples")
    train_matrix = load_matrix(train_path, "sparse-triples") if train_path else None
    records: List[MetricRecord] = []
    summary: Dict[str, Any] = {"metric": metric, "truth": truth_path, "pred": pred_path, "test": test_path}

    if metric == "rmse":
        value = rmse(truth, pred, _coords(test))
        records.append(MetricRecord("rmse", None, None, value))
        print(f"\n📏 RMSE: {value:.6f}")
    elif metric == "recall":
        test_items: Dict[int, List[int]] = {}
        for r, c in _coords(test):
            test_items.setdefault(r, []).append(c)
        train_items: Dict[int, List[int]] = {}
        if train_matrix is not None:
            for r, c in _coords(train_matrix):
                train_items.setdefault(r, []).append(c)
        for n in range(1, N + 1):
            records.append(MetricRecord("recall", n, None, mean_recall_at_n(pred, train_items, test_items, n)))
        print(f"\n📈 Recall@{N}: {records[-1].value:.4f}")
    elif metric == "probability":
        known = train_matrix if train_matrix is not None else np.zeros(to_dense(pred).shape)
        ranks = hidden_pair_ranks(pred, known, _coords(test))
        curve = probability_at_n(ranks, N)
        records.extend(MetricRecord("probability", n, None, float(p)) for n, p in enumerate(curve, start=1))
        print(f"\n📈 probability@{N}: {curve[-1]:.4f} over {len(ranks)} hidden pairs")
        if plots:
            _plot_probability(bundle.path("probability_at_n.png"), curve)
    else:
        raise DCMFError(f"unknown metric '{metric}'")

    write_records_csv(bundle.path("metrics.csv"), [r.as_record() for r in records])
    summary["values"] = len(records)
    write_summary(bundle, summary, time.perf_counter() - started)
    return bundle


# ------------------------------------------------------------------ entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dcmf", description="Deep collective matrix factorization")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    parser.add_argument("--plots", action="store_true", help="write PNG charts next to the reports")
    parser.add_argument("--folds-parallel", action="store_true", help="run CV folds in worker processes")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (("run", "train with fixed hyperparameters"), ("tune", "Bayesian-optimize hyperparameters")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="JSON run configuration")
        p.add_argument("--preset", choices=sorted(RUN_PRESETS))
        p.add_argument("--output", help="output directory (overrides the config)")
        p.add_argument("--seed", type=int)
        p.add_argument("--steps", type=int, help="BO step count n")
        p.add_argument("--init", type=int, help="BO initial sample count m")

    p = sub.add_parser("synth", help="generate a synthetic study")
    p.add_argument("preset", choices=SYNTH_PRESETS)
    p.add_argument("--output", required=True)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--k-true", type=int, default=100)
    p.add_argument("--K", type=int, default=100, help="factorization rank used for evaluation")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--test-size", type=int)
    p.add_argument("--evaluate", action="store_true", help="cross-validate dCMF and CMF")
    p.add_argument("--tune", action="store_true", help="tune dCMF per dataset before cross-validating")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--init", type=int, default=10)

    p = sub.add_parser("eval", help="score predictions against truth")
    p.add_argument("--truth", required=True)
    p.add_argument("--format", choices=("dense-csv", "sparse-triples"), default="dense-csv")
    p.add_argument("--pred", required=True, help="dense CSV of predicted scores")
    p.add_argument("--test", required=True, help="sparse triples marking the test entries")
    p.add_argument("--train", help="sparse triples marking training entries to exclude from rankings")
    p.add_argument("--metric", choices=("rmse", "recall", "probability"), default="rmse")
    p.add_argument("--N", type=int, default=10)
    p.add_argument("--output", required=True)
    return parser


def _output_dir(args) -> Optional[str]:
    if args.command in ("run", "tune"):
        return getattr(args, "output", None)
    return args.output


def _mark_failed(output_dir: Optional[str], message: str):
    if not output_dir:
        return
    try:
        atomic_write_text(os.path.join(output_dir, FAILED_MARKER), message + "\n")
        print(f"💡 Partial outputs kept in {output_dir}")
    except OSError:
        pass


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    show_header()
    output_dir = _output_dir(args)
    try:
        if args.command in ("run", "tune"):
            overrides: Dict[str, Any] = {"mode": "tune" if args.command == "tune" else "train"}
            if args.output:
                overrides["output_dir"] = args.output
            if args.seed is not None:
                overrides["seed"] = args.seed
            bo_overrides = {}
            if args.steps is not None:
                bo_overrides["step_count"] = args.steps
            if args.init is not None:
                bo_overrides["init_count"] = args.init
            if bo_overrides:
                overrides["bo"] = bo_overrides
            manager = DCMFConfigManager(args.config)
            cfg = manager.load_config(preset=args.preset, overrides=overrides)
            output_dir = cfg.output_dir
            show_config(cfg)
            bundle = run_experiment(cfg, plots=args.plots, manager=manager)
        elif args.command == "synth":
            bundle = run_synth(args.preset, args.output, args.scale, args.k_true, args.seed, args.folds,
                               args.evaluate, args.tune, args.test_size, args.K, args.steps, args.init,
                               args.folds_parallel, args.plots)
        else:
            bundle = run_eval(args.truth, args.pred, args.test, args.output, args.metric, args.N,
                              args.train, args.format, args.plots)
    except (DCMFError, OSError) as e:
        print(f"\n❌ {type(e).__name__}: {e}")
        logger.debug("run failed", exc_info=True)
        _mark_failed(output_dir, f"{type(e).__name__}: {e}")
        return 1
    except KeyboardInterrupt:
        print("\n👋 Interrupted by user")
        _mark_failed(output_dir, "interrupted")
        return 1
    except Exception as e:
        print(f"\n💥 Unexpected {type(e).__name__}: {e}")
        logger.exception("run crashed")
        _mark_failed(output_dir, f"{type(e).__name__}: {e}")
        return 1

    marker = os.path.join(bundle.output_dir, FAILED_MARKER)
    if os.path.exists(marker):
        os.unlink(marker)
    print(f"\n💾 {len(bundle.files)} files written to {bundle.output_dir}")
    print("=" * 80)
    return 0


if __name__ == "__main__":
    sys.exit(main())
