#!/usr/bin/env python3
"""
dCMF Engine - Collective Autoencoder Network
============================================

One autoencoder per entity, all sharing the bottleneck width K, trained
jointly on L = L_E + L_R: the autoencoders' reconstruction losses plus the
reconstruction loss of every view from the product of its row and column
entity encodings. Exposes embeddings, matrix completion, cold-start
prediction and parameter counting.

This program is free software: you can redistribute it and/or modify
it under the terms of the GNU General Public License as published by
the Free Software Foundation, either version 3 of the License, or
(at your option) any later version.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from dcmf_autoencoder import (
    ACTIVATIONS, OPTIMIZERS, AEWeights, ArchitecturePlan, backward, forward, forward_trace,
    init_weights, make_optimizer, plan_architecture, pretrain, rms_loss,
)
from dcmf_errors import (
    DomainError, EntityLookupError, GraphValidationError, NumericalDivergenceError,
    ShapeError, TopologyError, TrainingError,
)
from dcmf_graph_model import (
    ConcatenatedMatrix, RelationGraph, build_concatenated_matrix, entity_diagnostics,
    mask_graph, max_abs_scale, validate_graph,
)
from dcmf_numerics import derive_rng, least_squares_solve, matmul, to_dense

logger = logging.getLogger(__name__)

MaskEntry = Tuple[str, int, int]


@dataclass(frozen=True)
class TaskLossVector:
    """Per-autoencoder l_E and per-view l_R losses observed after one epoch"""
    entity_ids: Tuple[str, ...]
    view_ids: Tuple[str, ...]
    ae_losses: Tuple[float, ...]
    matrix_losses: Tuple[float, ...]
    epoch: int = 0

    def __post_init__(self):
        object.__setattr__(self, "ae_losses", tuple(float(x) for x in self.ae_losses))
        object.__setattr__(self, "matrix_losses", tuple(float(x) for x in self.matrix_losses))
        if len(self.ae_losses) != len(self.entity_ids) or len(self.matrix_losses) != len(self.view_ids):
            raise ShapeError("loss vector length does not match its labels")
        values = self.as_array()
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise DomainError("task losses must be finite and non-negative")

    def as_array(self) -> np.ndarray:
        return np.array(self.ae_losses + self.matrix_losses, dtype=np.float64)

    @property
    def names(self) -> List[str]:
        return [f"l_E[{e}]" for e in self.entity_ids] + [f"l_R[{m}]" for m in self.view_ids]

    def scalar(self) -> float:
        """Sum of all E+M terms (their 1-norm, as every term is non-negative)"""
        return float(sum(self.ae_losses) + sum(self.matrix_losses))

    def __len__(self) -> int:
        return len(self.ae_losses) + len(self.matrix_losses)

    def as_record(self) -> Dict:
        record = {"epoch": self.epoch}
        record.update(zip(self.names, self.as_array().tolist()))
        record["total"] = self.scalar()
        return record


@dataclass(frozen=True)
class TrainConfig:
    """dCMF training hyperparameters"""
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    batch_count: int = 1
    max_epochs: int = 100
    convergence_threshold: float = 1e-5
    pretrain: bool = False
    pretrain_threshold: float = 1e-4
    pretrain_max_epochs: int = 50
    seed: int = 0
    optimizer: str = "sgd"
    momentum: float = 0.0
    matrix_loss_weight: float = 1.0
    inject_matrix_gradients: bool = True
    patience: int = 1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise DomainError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise DomainError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if self.batch_count < 1:
            raise DomainError(f"batch_count must be >= 1, got {self.batch_count}")
        if self.max_epochs < 1 or self.pretrain_max_epochs < 1:
            raise DomainError("max_epochs and pretrain_max_epochs must be >= 1")
        if not self.convergence_threshold > 0 or not self.pretrain_threshold > 0:
            raise DomainError("convergence thresholds must be positive")
        if self.optimizer not in OPTIMIZERS:
            raise DomainError(f"unknown optimizer '{self.optimizer}', expected one of {OPTIMIZERS}")
        if not 0.0 <= self.momentum < 1.0:
            raise DomainError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.matrix_loss_weight < 0:
            raise DomainError(f"matrix_loss_weight must be non-negative, got {self.matrix_loss_weight}")
        if self.patience < 1:
            raise DomainError(f"patience must be >= 1, got {self.patience}")


@dataclass
class EntityAutoencoder:
    entity: str
    concat: ConcatenatedMatrix
    plan: ArchitecturePlan
    weights: AEWeights


@dataclass
class DCMFNetwork:
    """E autoencoders over the concatenated matrices of a relation graph"""
    graph: RelationGraph
    K: int
    f_k: float
    activation: str
    seed: int
    scale: bool
    autoencoders: Dict[str, EntityAutoencoder] = field(default_factory=dict)

    def autoencoder(self, entity_id: str) -> EntityAutoencoder:
        try:
            return self.autoencoders[entity_id]
        except KeyError:
            raise EntityLookupError(f"unknown entity '{entity_id}'") from None

    def copy(self) -> "DCMFNetwork":
        aes = {e: replace(ae, weights=ae.weights.copy()) for e, ae in self.autoencoders.items()}
        return replace(self, autoencoders=aes)

    @property
    def loss_terms(self) -> int:
        return len(self.graph.entities) + len(self.graph.views)


class TrainResult(NamedTuple):
    network: DCMFNetwork
    history: List[TaskLossVector]
    validation_rmse: Optional[float]


class ParamCount(NamedTuple):
    p_u: int
    p_d: int
    total: int


def _concat_for(g: RelationGraph, entity_id: str, scale: bool) -> ConcatenatedMatrix:
    c = build_concatenated_matrix(g, entity_id)
    return max_abs_scale(c) if scale else c


def build_network(g: RelationGraph, K: int, f_k: float = 0.5, activation: str = "tanh",
                  seed: int = 0, scale: bool = False) -> DCMFNetwork:
    """Input transformation and one autoencoder per entity, initialized from the seed"""
    report = validate_graph(g)
    if not report.ok:
        raise GraphValidationError(report)
    if activation not in ACTIVATIONS:
        raise DomainError(f"unknown activation '{activation}'")
    aes: Dict[str, EntityAutoencoder] = {}
    for e in g.entity_ids:
        c = _concat_for(g, e, scale)
        plan = plan_architecture(c.shape[1], f_k, K, activation)
        weights = init_weights(plan, seed, rng=derive_rng(seed, "init", e))
        aes[e] = EntityAutoencoder(e, c, plan, weights)
        diag = entity_diagnostics(g, e)
        logger.info("entity %s: size=%d shape=%s N_e=%d sparsity=%.3f layers=%s (%s)",
                    e, diag.size, diag.shape, diag.interactions, diag.sparsity,
                    list(plan.encoder_sizes), diag.risk)
    return DCMFNetwork(g, K, f_k, activation, seed, scale, aes)


def _rebind(net: DCMFNetwork, g: RelationGraph) -> DCMFNetwork:
    """Same weights, concatenated matrices rebuilt from another graph with identical topology"""
    aes = {e: replace(ae, concat=_concat_for(g, e, net.scale)) for e, ae in net.autoencoders.items()}
    return replace(net, graph=g, autoencoders=aes)


def _encode(ae: EntityAutoencoder) -> Tuple[np.ndarray, np.ndarray]:
    encoding, recon = forward(ae.weights, ae.plan, ae.concat.data)
    if not (np.all(np.isfinite(encoding)) and np.all(np.isfinite(recon))):
        raise NumericalDivergenceError(ae.entity)
    return encoding, recon


def embeddings(net: DCMFNetwork) -> Dict[str, np.ndarray]:
    """U^(e) for every entity: the bottleneck encoding of the full C^(e)"""
    return {e: _encode(ae)[0] for e, ae in net.autoencoders.items()}


def collective_loss(net: DCMFNetwork, epoch: int = 0) -> TaskLossVector:
    """RMS l_E per autoencoder and RMS l_R per view, over all entries"""
    encodings = {}
    ae_losses = []
    for e, ae in net.autoencoders.items():
        encoding, recon = _encode(ae)
        encodings[e] = encoding
        ae_losses.append(rms_loss(ae.concat.data, recon)[0])
    matrix_losses = []
    for v in net.graph.views:
        pred = encodings[v.row_entity] @ encodings[v.col_entity].T
        matrix_losses.append(rms_loss(to_dense(v.data), pred)[0])
    return TaskLossVector(tuple(net.autoencoders), tuple(net.graph.view_ids),
                          tuple(ae_losses), tuple(matrix_losses), epoch)


def _run_epoch(net: DCMFNetwork, cfg: TrainConfig, optimizers: Dict, views: Dict[str, np.ndarray],
               rng: np.random.Generator):
    aes = net.autoencoders
    if cfg.batch_count == 1:
        batches = {e: [np.arange(ae.concat.shape[0])] for e, ae in aes.items()}
    else:
        batches = {e: np.array_split(rng.permutation(ae.concat.shape[0]), cfg.batch_count)
                   for e, ae in aes.items()}
    column_entities = {v.col_entity for v in net.graph.views}

    for b in range(cfg.batch_count):
        rows = {e: batches[e][b] for e in aes}
        traces = {e: forward_trace(ae.weights, ae.plan, ae.concat.data[rows[e]]) for e, ae in aes.items()}
        if cfg.batch_count == 1:
            full_traces = traces
        else:
            # column-side encodings are refreshed over all instances every batch
            full_traces = {e: forward_trace(aes[e].weights, aes[e].plan, aes[e].concat.data)
                           for e in column_entities if cfg.inject_matrix_gradients}

        out_grads, enc_grads, full_enc_grads = {}, {}, {}
        for e, ae in aes.items():
            trace = traces[e]
            _, out_grads[e] = rms_loss(ae.concat.data[rows[e]], trace[-1])
            enc_grads[e] = np.zeros_like(trace[ae.plan.n_encoder_layers])
            if e in full_traces and full_traces is not traces:
                full_enc_grads[e] = np.zeros_like(full_traces[e][ae.plan.n_encoder_layers])

        if cfg.inject_matrix_gradients:
            for v in net.graph.views:
                r, c = v.row_entity, v.col_entity
                if rows[r].size == 0:
                    continue
                u_r = traces[r][aes[r].plan.n_encoder_layers]
                u_c = full_traces[c][aes[c].plan.n_encoder_layers]
                _, g_pred = rms_loss(views[v.id][rows[r]], u_r @ u_c.T)
                g_pred = cfg.matrix_loss_weight * g_pred
                enc_grads[r] += g_pred @ u_c
                if full_traces is traces:
                    enc_grads[c] += g_pred.T @ u_r
                else:
                    full_enc_grads[c] += g_pred.T @ u_r

        for e, ae in aes.items():
            if rows[e].size == 0 and e not in full_enc_grads:
                continue
            grads = backward(ae.weights, ae.plan, None, out_grads[e], enc_grads[e], traces[e])
            if e in full_enc_grads:
                extra = backward(ae.weights, ae.plan, None, np.zeros_like(full_traces[e][-1]),
                                 full_enc_grads[e], full_traces[e])
                grads.weights = [g1 + g2 for g1, g2 in zip(grads.weights, extra.weights)]
                grads.biases = [g1 + g2 for g1, g2 in zip(grads.biases, extra.biases)]
            ae.weights = optimizers[e].step(ae.weights, grads, cfg.learning_rate, cfg.weight_decay)


def holdout_rmse(truth_graph: RelationGraph, U: Dict[str, np.ndarray], mask: Sequence[MaskEntry]) -> Optional[float]:
    """RMSE of U_r U_c^T on the masked entries of the center view (all masked entries without one)"""
    center = truth_graph.center_view
    scored = [m for m in mask if center is None or m[0] == center]
    if not scored:
        return None
    errors = []
    for view_id in sorted({m[0] for m in scored}):
        v = truth_graph.view(view_id)
        coords = [(r, c) for vid, r, c in scored if vid == view_id]
        rows = np.array([r for r, _ in coords])
        cols = np.array([c for _, c in coords])
        truth = to_dense(v.data)[rows, cols]
        pred = np.einsum("ik,ik->i", U[v.row_entity][rows], U[v.col_entity][cols])
        errors.append(truth - pred)
    diff = np.concatenate(errors)
    return float(np.sqrt(np.mean(diff * diff)))


def train(net: DCMFNetwork, cfg: TrainConfig, validation_mask: Optional[Iterable[MaskEntry]] = None,
          progress: bool = False) -> TrainResult:
    """Joint SGD on L = L_E + L_R until the epoch improvement drops below the threshold"""
    truth_graph = net.graph
    mask = sorted(set(validation_mask)) if validation_mask else []
    net = net.copy()
    if mask:
        net = _rebind(net, mask_graph(truth_graph, mask))

    if cfg.pretrain:
        for e, ae in net.autoencoders.items():
            ae.weights = pretrain(ae.weights, ae.plan, ae.concat.data, cfg.learning_rate,
                                  cfg.pretrain_threshold, cfg.pretrain_max_epochs,
                                  weight_decay=cfg.weight_decay, optimizer=cfg.optimizer,
                                  momentum=cfg.momentum)

    optimizers = {e: make_optimizer(cfg.optimizer, cfg.momentum) for e in net.autoencoders}
    views = {v.id: to_dense(v.data) for v in net.graph.views}
    rng = derive_rng(cfg.seed, "batches")
    history: List[TaskLossVector] = []
    try:
        previous = collective_loss(net).scalar()
    except NumericalDivergenceError as err:
        raise TrainingError(f"initial network is not finite: {err}", history) from err

    stalled = 0
    epochs = range(1, cfg.max_epochs + 1)
    if progress:
        epochs = tqdm(epochs, desc="dCMF epochs", leave=False)
    for epoch in epochs:
        _run_epoch(net, cfg, optimizers, views, rng)
        try:
            losses = collective_loss(net, epoch)
        except (NumericalDivergenceError, DomainError) as err:
            raise TrainingError(f"training diverged at epoch {epoch}: {err}", history) from err
        history.append(losses)
        current = losses.scalar()
        logger.debug("epoch %d: L=%.6f", epoch, current)
        # patience counts consecutive epochs whose gain fell below the threshold
        stalled = stalled + 1 if previous - current < cfg.convergence_threshold else 0
        if stalled >= cfg.patience:
            break
        previous = current

    validation_rmse = holdout_rmse(truth_graph, embeddings(net), mask) if mask else None
    return TrainResult(net, history, validation_rmse)


def reconstruct_matrix(net: DCMFNetwork, view_id: str, U: Optional[Dict[str, np.ndarray]] = None) -> np.ndarray:
    """X^(m)' = U^(r_m) . U^(c_m)^T"""
    v = net.graph.view(view_id)
    U = U if U is not None else embeddings(net)
    return matmul(U[v.row_entity], U[v.col_entity].T)


def reconstruct_all(net: DCMFNetwork) -> Dict[str, np.ndarray]:
    U = embeddings(net)
    return {v.id: reconstruct_matrix(net, v.id, U) for v in net.graph.views}


def predict_cold_start(net: DCMFNetwork, side_view: str, target_view: str, h) -> np.ndarray:
    """Scores for unseen row instances from their side-feature rows h"""
    side = net.graph.view(side_view)
    target = net.graph.view(target_view)
    if side.row_entity != target.row_entity:
        raise TopologyError(f"views '{side_view}' and '{target_view}' do not share their row entity")
    h = np.asarray(h, dtype=np.float64)
    single = h.ndim == 1
    h = np.atleast_2d(h)
    n_features = net.graph.size(side.col_entity)
    if h.shape[1] != n_features:
        raise ShapeError("feature row width does not match side view", h.shape, (h.shape[0], n_features))
    U = embeddings(net)
    u_new = least_squares_solve(U[side.col_entity], h.T).T
    scores = matmul(u_new, U[target.col_entity].T)
    return scores[0] if single else scores


def param_count(source: Union[DCMFNetwork, Sequence[int]], K: Optional[int] = None) -> ParamCount:
    """p_u = sum |e| K; p_d = autoencoder weights + biases (0 for the CMF baseline)"""
    if isinstance(source, DCMFNetwork):
        K = source.K if K is None else K
        sizes = [e.size for e in source.graph.entities]
        p_d = sum(ae.plan.param_count for ae in source.autoencoders.values())
    else:
        if K is None:
            raise DomainError("K is required for a baseline parameter count")
        sizes = list(source)
        p_d = 0
    if K < 0:
        raise DomainError(f"K must be non-negative, got {K}")
    p_u = int(sum(int(s) * K for s in sizes))
    return ParamCount(p_u, int(p_d), p_u + int(p_d))
