#!/usr/bin/env python3
"""
dCMF CMF Baseline - Linear Collective Matrix Factorization
==========================================================

Classical CMF: every entity gets one factor U^(e) (d_e x K) shared by all of
its views, fitted by full-gradient descent on

    sum_m mean((X^(m) - U^(r_m) U^(c_m)^T)^2) + lambda * sum_e ||U^(e)||_F^2

with Armijo backtracking, so the objective never increases between epochs.
Reported view losses are RMS, matching the dCMF engine.

This program is free software: you can redistribute it and/or modify
it under the terms of the GNU General Public License as published by
the Free Software Foundation, either version 3 of the License, or
(at your option) any later version.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from dcmf_engine import MaskEntry, TrainConfig, holdout_rmse
from dcmf_errors import DomainError, EntityLookupError, GraphValidationError, TrainingError
from dcmf_graph_model import RelationGraph, mask_graph, validate_graph
from dcmf_numerics import derive_rng, matmul, to_dense

logger = logging.getLogger(__name__)

INIT_RANGE = 0.1
ARMIJO_C = 1e-4
MIN_STEP = 1e-14

# stopping rule sized for the mean-squared objective
CMF_TRAIN = TrainConfig(learning_rate=0.1, convergence_threshold=1e-10, max_epochs=5000, patience=10)


@dataclass(frozen=True)
class CMFEpoch:
    epoch: int
    objective: float
    view_rms: Tuple[float, ...]
    factor_norm: float

    def as_record(self, view_ids: Iterable[str]) -> Dict:
        record = {"epoch": self.epoch, "objective": self.objective}
        record.update({f"rms[{m}]": v for m, v in zip(view_ids, self.view_rms)})
        record["factor_norm"] = self.factor_norm
        return record


@dataclass
class CMFFactors:
    """One d_e x K factor per entity plus the Frobenius weight lambda"""
    graph: RelationGraph
    factors: Dict[str, np.ndarray]
    lam: float
    history: List[CMFEpoch] = field(default_factory=list)
    validation_rmse: Optional[float] = None

    def __post_init__(self):
        widths = {u.shape[1] for u in self.factors.values()}
        if len(widths) > 1:
            raise DomainError(f"factors disagree on K: {sorted(widths)}")
        for e in self.graph.entities:
            u = self.factors.get(e.id)
            if u is None or u.shape[0] != e.size:
                raise DomainError(f"factor for entity '{e.id}' does not match its size {e.size}")

    @property
    def K(self) -> int:
        return next(iter(self.factors.values())).shape[1]

    def factor(self, entity_id: str) -> np.ndarray:
        try:
            return self.factors[entity_id]
        except KeyError:
            raise EntityLookupError(f"unknown entity '{entity_id}'") from None


def cmf_objective(g: RelationGraph, factors: Dict[str, np.ndarray], lam: float
                  ) -> Tuple[float, Dict[str, np.ndarray]]:
    """Objective value and its gradient for every factor"""
    value = 0.0
    grads = {e: 2.0 * lam * u for e, u in factors.items()}
    for v in g.views:
        u_r, u_c = factors[v.row_entity], factors[v.col_entity]
        residual = u_r @ u_c.T - to_dense(v.data)
        n = residual.size
        value += float(np.sum(residual * residual)) / n
        grads[v.row_entity] = grads[v.row_entity] + (2.0 / n) * residual @ u_c
        grads[v.col_entity] = grads[v.col_entity] + (2.0 / n) * residual.T @ u_r
    value += lam * sum(float(np.sum(u * u)) for u in factors.values())
    return value, grads


def _view_rms(g: RelationGraph, factors: Dict[str, np.ndarray]) -> Tuple[float, ...]:
    out = []
    for v in g.views:
        residual = factors[v.row_entity] @ factors[v.col_entity].T - to_dense(v.data)
        out.append(float(np.sqrt(np.mean(residual * residual))) if residual.size else 0.0)
    return tuple(out)


def _norm(factors: Dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(np.sum(u * u) for u in factors.values())))


def cmf_train(g: RelationGraph, K: int, lam: float, cfg: Optional[TrainConfig] = None,
              validation_mask: Optional[Iterable[MaskEntry]] = None, progress: bool = False) -> CMFFactors:
    """Fit the shared factors by full-gradient descent with backtracking

    Stops after `cfg.patience` consecutive epochs gaining less than
    `cfg.convergence_threshold`. Defaults to CMF_TRAIN.
    """
    cfg = cfg or CMF_TRAIN
    report = validate_graph(g)
    if not report.ok:
        raise GraphValidationError(report)
    if K < 1:
        raise DomainError(f"K must be positive, got {K}")
    if lam < 0:
        raise DomainError(f"lambda must be non-negative, got {lam}")

    mask = sorted(set(validation_mask)) if validation_mask else []
    train_graph = mask_graph(g, mask) if mask else g
    factors = {e.id: derive_rng(cfg.seed, "cmf", e.id).uniform(-INIT_RANGE, INIT_RANGE, size=(e.size, K))
               for e in g.entities}

    objective, grads = cmf_objective(train_graph, factors, lam)
    if not np.isfinite(objective):
        raise TrainingError("CMF objective is not finite at initialization")
    step = cfg.learning_rate
    history: List[CMFEpoch] = []
    stalled = 0
    epochs = range(1, cfg.max_epochs + 1)
    if progress:
        epochs = tqdm(epochs, desc="CMF epochs", leave=False)
    for epoch in epochs:
        grad_sq = sum(float(np.sum(d * d)) for d in grads.values())
        if grad_sq == 0.0:
            break
        # grow the step after each accepted move, shrink until sufficient decrease
        step = min(step * 2.0, 1e6 * cfg.learning_rate)
        while True:
            candidate = {e: u - step * grads[e] for e, u in factors.items()}
            new_objective, new_grads = cmf_objective(train_graph, candidate, lam)
            if np.isfinite(new_objective) and new_objective <= objective - ARMIJO_C * step * grad_sq:
                break
            step *= 0.5
            if step < MIN_STEP:
                candidate = None
                break
        if candidate is None:
            logger.debug("CMF line search stalled at epoch %d", epoch)
            break
        gain = objective - new_objective
        factors, objective, grads = candidate, new_objective, new_grads
        history.append(CMFEpoch(epoch, objective, _view_rms(train_graph, factors), _norm(factors)))
        stalled = stalled + 1 if gain < cfg.convergence_threshold else 0
        if stalled >= cfg.patience:
            break

    if history:
        logger.info("CMF finished after %d epochs: objective=%.6g", len(history), history[-1].objective)
    result = CMFFactors(g, factors, lam, history)
    if mask:
        result.validation_rmse = holdout_rmse(g, factors, mask)
    return result


def cmf_reconstruct(f: CMFFactors, view_id: str) -> np.ndarray:
    """X^(m)' = U^(r_m) U^(c_m)^T"""
    v = f.graph.view(view_id)
    return matmul(f.factor(v.row_entity), f.factor(v.col_entity).T)
