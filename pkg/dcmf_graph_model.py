#!/usr/bin/env python3
"""
dCMF Graph Model - Entity/Matrix Relationship Graph
===================================================

Declares entities and the views (matrices) relating pairs of them, checks the
bipartite structure, and performs the input transformation: one concatenated
matrix per entity, rows indexing the entity's instances, the incident views
laid side by side in declaration order (transposed where the entity is the
column entity).

This program is free software: you can redistribute it and/or modify
it under the terms of the GNU General Public License as published by
the Free Software Foundation, either version 3 of the License, or
(at your option) any later version.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from dcmf_errors import DomainError, EntityLookupError, ViewLookupError
from dcmf_numerics import RealMatrix, sparsity, to_dense

logger = logging.getLogger(__name__)

DATATYPES = ("real", "binary")

# diagnostics flag an entity when one side of its concatenated matrix is this many times the other
SHAPE_RISK_RATIO = 10.0


@dataclass(frozen=True)
class EntityDecl:
    """An entity type and its number of instances"""
    id: str
    size: int


@dataclass(frozen=True, eq=False)
class ViewDecl:
    """One input matrix relating a row entity to a column entity"""
    id: str
    row_entity: str
    col_entity: str
    data: RealMatrix
    datatype: str = "real"

    @property
    def shape(self) -> Tuple[int, int]:
        return tuple(self.data.shape)


@dataclass(frozen=True, eq=False)
class RelationGraph:
    """Bipartite entity-matrix graph G(V_E, V_M, D)"""
    entities: Tuple[EntityDecl, ...]
    views: Tuple[ViewDecl, ...]
    center_view: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "entities", tuple(self.entities))
        object.__setattr__(self, "views", tuple(self.views))

    @property
    def entity_ids(self) -> List[str]:
        return [e.id for e in self.entities]

    @property
    def view_ids(self) -> List[str]:
        return [v.id for v in self.views]

    def entity(self, entity_id: str) -> EntityDecl:
        for e in self.entities:
            if e.id == entity_id:
                return e
        raise EntityLookupError(f"unknown entity '{entity_id}'")

    def view(self, view_id: str) -> ViewDecl:
        for v in self.views:
            if v.id == view_id:
                return v
        raise ViewLookupError(f"unknown view '{view_id}'")

    def size(self, entity_id: str) -> int:
        return self.entity(entity_id).size

    def incident_views(self, entity_id: str) -> List[ViewDecl]:
        """Views touching the entity, in declaration order"""
        self.entity(entity_id)
        return [v for v in self.views if entity_id in (v.row_entity, v.col_entity)]

    def replace_views(self, views: Sequence[ViewDecl]) -> "RelationGraph":
        return RelationGraph(self.entities, tuple(views), self.center_view)


@dataclass(frozen=True)
class Finding:
    kind: str
    subject: str
    message: str

    def __str__(self) -> str:
        return f"[{self.kind}] {self.subject}: {self.message}"


@dataclass
class ValidationReport:
    findings: List[Finding] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.findings

    def kinds(self) -> List[str]:
        return [f.kind for f in self.findings]

    def add(self, kind: str, subject: str, message: str):
        self.findings.append(Finding(kind, subject, message))


@dataclass(frozen=True)
class Segment:
    view_id: str
    transposed: bool
    col_offset: int
    col_count: int


@dataclass(frozen=True, eq=False)
class ConcatenatedMatrix:
    """C^(e): rows are instances of the entity, columns the concatenated views"""
    entity: str
    data: np.ndarray
    segments: Tuple[Segment, ...]
    scaled: bool = False

    @property
    def shape(self) -> Tuple[int, int]:
        return tuple(self.data.shape)

    def segment(self, view_id: str) -> Segment:
        for s in self.segments:
            if s.view_id == view_id:
                return s
        raise ViewLookupError(f"view '{view_id}' is not part of C({self.entity})")


@dataclass(frozen=True)
class EntityDiagnostics:
    entity: str
    size: int
    shape: Tuple[int, int]
    interactions: int
    sparsity: float
    risk: str

    def as_record(self) -> Dict:
        return {
            "entity": self.entity,
            "size": self.size,
            "p": self.shape[0],
            "q": self.shape[1],
            "interactions": self.interactions,
            "sparsity": self.sparsity,
            "risk": self.risk,
        }


def validate_graph(g: RelationGraph) -> ValidationReport:
    """List every structural violation; an empty report means the graph is usable"""
    report = ValidationReport()
    sizes: Dict[str, int] = {}
    for e in g.entities:
        if e.id in sizes:
            report.add("duplicate-entity", e.id, "entity id declared twice")
            continue
        sizes[e.id] = e.size
        if not isinstance(e.size, (int, np.integer)) or e.size < 1:
            report.add("invalid-size", e.id, f"size must be a positive count, got {e.size!r}")

    seen_views = set()
    seen_pairs: Dict[frozenset, str] = {}
    touched = set()
    for v in g.views:
        if v.id in seen_views:
            report.add("duplicate-view", v.id, "view id declared twice")
        seen_views.add(v.id)
        if v.datatype not in DATATYPES:
            report.add("invalid-datatype", v.id, f"datatype must be one of {DATATYPES}, got {v.datatype!r}")
        dangling = [eid for eid in (v.row_entity, v.col_entity) if eid not in sizes]
        for eid in dangling:
            report.add("dangling-id", v.id, f"references undeclared entity '{eid}'")
        if v.row_entity == v.col_entity:
            report.add("self-relation", v.id, f"relates entity '{v.row_entity}' to itself")
            continue
        touched.update(eid for eid in (v.row_entity, v.col_entity) if eid in sizes)
        pair = frozenset((v.row_entity, v.col_entity))
        if pair in seen_pairs:
            report.add("duplicate-pair", v.id,
                       f"entities {v.row_entity}/{v.col_entity} already related by view '{seen_pairs[pair]}'")
        else:
            seen_pairs[pair] = v.id
        if not dangling:
            expected = (sizes[v.row_entity], sizes[v.col_entity])
            if tuple(v.data.shape) != expected:
                report.add("dimension-mismatch", v.id, f"data is {tuple(v.data.shape)}, entities declare {expected}")
        values = v.data.data if hasattr(v.data, "tocoo") else np.asarray(v.data)
        if not np.all(np.isfinite(values)):
            report.add("non-finite", v.id, "data contains NaN or infinite values")

    for eid in sizes:
        if eid not in touched:
            report.add("isolated-entity", eid, "entity appears in no view")

    if touched and not any(f.kind == "isolated-entity" for f in report.findings):
        components = _components(g, sizes)
        if components > 1:
            report.add("disconnected", "graph", f"entity-matrix graph has {components} components")

    if g.center_view is not None and g.center_view not in seen_views:
        report.add("dangling-id", "center_view", f"center view '{g.center_view}' is not declared")
    return report


def _components(g: RelationGraph, sizes: Dict[str, int]) -> int:
    adjacency = defaultdict(set)
    for v in g.views:
        if v.row_entity in sizes and v.col_entity in sizes:
            adjacency[v.row_entity].add(v.col_entity)
            adjacency[v.col_entity].add(v.row_entity)
    remaining = set(sizes)
    count = 0
    while remaining:
        count += 1
        stack = [remaining.pop()]
        while stack:
            node = stack.pop()
            for nxt in adjacency[node]:
                if nxt in remaining:
                    remaining.discard(nxt)
                    stack.append(nxt)
    return count


def build_concatenated_matrix(g: RelationGraph, e: str) -> ConcatenatedMatrix:
    """C^(e): incident views side by side, transposed where e is the column entity"""
    views = g.incident_views(e)
    if not views:
        raise EntityLookupError(f"entity '{e}' appears in no view")
    blocks = []
    segments = []
    offset = 0
    for v in views:
        block = to_dense(v.data)
        transposed = v.row_entity != e
        if transposed:
            block = block.T
        segments.append(Segment(v.id, transposed, offset, block.shape[1]))
        blocks.append(block)
        offset += block.shape[1]
    datatypes = {v.datatype for v in views}
    if len(datatypes) > 1:
        logger.warning("C(%s) mixes datatypes %s; consider max-abs scaling", e, sorted(datatypes))
    return ConcatenatedMatrix(e, np.hstack(blocks), tuple(segments))


def extract_view(c: ConcatenatedMatrix, view_id: str) -> np.ndarray:
    """Cut a view back out of C^(e), in the view's own orientation"""
    s = c.segment(view_id)
    block = c.data[:, s.col_offset:s.col_offset + s.col_count]
    return block.T.copy() if s.transposed else block.copy()


def max_abs_scale(c: ConcatenatedMatrix) -> ConcatenatedMatrix:
    """Divide every feature column by its max |value| (no centering, zero columns kept)"""
    peak = np.max(np.abs(c.data), axis=0) if c.data.size else np.zeros(c.data.shape[1])
    peak = np.where(peak > 0, peak, 1.0)
    return replace(c, data=c.data / peak, scaled=True)


def mask_graph(g: RelationGraph, mask: Iterable[Tuple[str, int, int]]) -> RelationGraph:
    """Copy of the graph with the masked (view, row, col) entries set to zero"""
    by_view: Dict[str, List[Tuple[int, int]]] = defaultdict(list)
    for view_id, row, col in mask:
        by_view[view_id].append((row, col))
    for view_id in by_view:
        g.view(view_id)
    views = []
    for v in g.views:
        coords = by_view.get(v.id)
        if not coords:
            views.append(v)
            continue
        data = to_dense(v.data).copy()
        rows, cols = zip(*coords)
        data[list(rows), list(cols)] = 0.0
        views.append(replace(v, data=data))
    return g.replace_views(views)


def entity_diagnostics(g: RelationGraph, e: str) -> EntityDiagnostics:
    """Entity size, shape (p, q), interactions N_e and sparsity of C^(e)"""
    c = build_concatenated_matrix(g, e)
    p, q = c.shape
    if q >= SHAPE_RISK_RATIO * p:
        risk = "under-fitting (q >> p)"
    elif p >= SHAPE_RISK_RATIO * q:
        risk = "over-fitting (p >> q)"
    else:
        risk = "balanced"
    return EntityDiagnostics(e, g.size(e), (p, q), len(g.incident_views(e)), sparsity(c.data), risk)


def imbalance_ratio(m: int, n: int) -> float:
    """1 - min(m, n) / max(m, n) for an m x n view"""
    if m < 1 or n < 1:
        raise DomainError(f"view dimensions must be positive, got {m}x{n}")
    return 1.0 - min(m, n) / max(m, n)
