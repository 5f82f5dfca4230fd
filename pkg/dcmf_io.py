#!/usr/bin/env python3
"""
dCMF I/O - Matrix Files, Graph Files & Atomic Writes
====================================================

Readers for dense CSV, sparse triples and the MovieLens-100K ratings file,
the relation-graph JSON description, and whole-file atomic writers for every
report the terminal emits (CSV, JSON, JSON lines, .npz weight bundles).

This program is free software: you can redistribute it and/or modify
it under the terms of the GNU General Public License as published by
the Free Software Foundation, either version 3 of the License, or
(at your option) any later version.
"""

import csv
import io
import json
import logging
import os
import tempfile
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from dcmf_autoencoder import AEWeights
from dcmf_errors import ConfigParseError, LoadError, ShapeError
from dcmf_graph_model import DATATYPES, EntityDecl, RelationGraph, ViewDecl
from dcmf_numerics import RealMatrix, sparse_from_triples, to_dense

logger = logging.getLogger(__name__)

MATRIX_FORMATS = ("dense-csv", "sparse-triples", "movielens-100k")
MOVIELENS_100K_SHAPE = (943, 1682)


# ------------------------------------------------------------------ atomic writes

def atomic_write_bytes(path: str, data: bytes):
    """Write to a sibling temp file, then rename over the target"""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path: str, obj: Any):
    atomic_write_text(path, json.dumps(obj, indent=4, sort_keys=True, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"{type(obj).__name__} is not JSON serializable")


def write_records_csv(path: str, records: Sequence[Dict[str, Any]]):
    """One CSV row per record; columns are the union of keys in first-seen order"""
    fieldnames: List[str] = []
    for record in records:
        for key in record:
            if key not in fieldnames:
                fieldnames.append(key)
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=fieldnames, lineterminator="\n")
    writer.writeheader()
    for record in records:
        writer.writerow(record)
    atomic_write_text(path, buffer.getvalue())


# ------------------------------------------------------------------ matrices

def _parse_float(token: str, line: int, path: Optional[str]) -> float:
    try:
        return float(token)
    except ValueError:
        raise LoadError(f"'{token.strip()}' is not a number", line, path) from None


def _parse_index(token: str, line: int, path: Optional[str]) -> int:
    try:
        return int(token)
    except ValueError:
        raise LoadError(f"'{token.strip()}' is not an integer index", line, path) from None


def parse_dense_csv(text: str, path: Optional[str] = None) -> np.ndarray:
    rows = []
    width = None
    for line_no, fields in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not fields or all(not f.strip() for f in fields):
            continue
        if width is None:
            width = len(fields)
        elif len(fields) != width:
            raise LoadError(f"ragged row: {len(fields)} values, expected {width}", line_no, path)
        rows.append([_parse_float(f, line_no, path) for f in fields])
    if not rows:
        raise LoadError("no data rows", None, path)
    return np.array(rows, dtype=np.float64)


def parse_sparse_triples(text: str, path: Optional[str] = None) -> sp.coo_matrix:
    lines = text.splitlines()
    header_no = next((i for i, l in enumerate(lines) if l.strip()), None)
    if header_no is None:
        raise LoadError("missing 'rows,cols' header", 1, path)
    header = lines[header_no].split(",")
    if len(header) != 2:
        raise LoadError("header must be 'rows,cols'", header_no + 1, path)
    n_rows, n_cols = (_parse_index(t, header_no + 1, path) for t in header)
    if n_rows < 0 or n_cols < 0:
        raise LoadError("negative matrix shape", header_no + 1, path)
    rows, cols, values = [], [], []
    seen = set()
    for i in range(header_no + 1, len(lines)):
        line_no = i + 1
        raw = lines[i].strip()
        if not raw:
            continue
        parts = raw.split(",")
        if len(parts) != 3:
            raise LoadError(f"expected 'row,col,value', got {len(parts)} fields", line_no, path)
        r, c = _parse_index(parts[0], line_no, path), _parse_index(parts[1], line_no, path)
        v = _parse_float(parts[2], line_no, path)
        if not (0 <= r < n_rows and 0 <= c < n_cols):
            raise LoadError(f"coordinate ({r}, {c}) outside {n_rows}x{n_cols}", line_no, path)
        if (r, c) in seen:
            raise LoadError(f"duplicate triple at ({r}, {c})", line_no, path)
        seen.add((r, c))
        rows.append(r)
        cols.append(c)
        values.append(v)
    return sparse_from_triples((n_rows, n_cols), rows, cols, values)


def _read_text(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return f.read()
    except OSError as err:
        raise LoadError(f"cannot read file: {err.strerror or err}", None, path) from err


def load_matrix(path: str, fmt: str = "dense-csv", shape: Optional[Sequence[int]] = None,
                binarize: bool = False) -> RealMatrix:
    """Dense CSV (one row per line), sparse triples ('rows,cols' then 0-indexed 'row,col,value')
    or a MovieLens-100K ratings file sized by `shape`
    """
    if fmt not in MATRIX_FORMATS:
        raise LoadError(f"unknown matrix format '{fmt}', expected one of {MATRIX_FORMATS}", None, path)
    if fmt == "movielens-100k":
        return load_movielens_100k(path, binarize, shape or MOVIELENS_100K_SHAPE)
    text = _read_text(path)
    if fmt == "dense-csv":
        return parse_dense_csv(text, path)
    return parse_sparse_triples(text, path)


def format_dense_csv(m: RealMatrix) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    for row in to_dense(m):
        writer.writerow([repr(float(x)) for x in row])
    return buffer.getvalue()


def save_matrix(path: str, m: RealMatrix):
    atomic_write_text(path, format_dense_csv(m))


def load_movielens_100k(path: str, binarize: bool = True,
                        shape: Sequence[int] = MOVIELENS_100K_SHAPE) -> sp.coo_matrix:
    """Ratings 'user<TAB>item<TAB>rating<TAB>timestamp' with 1-indexed ids"""
    n_users, n_items = shape
    rows, cols, values = [], [], []
    seen = set()
    for line_no, raw in enumerate(_read_text(path).splitlines(), start=1):
        if not raw.strip():
            continue
        parts = raw.split("\t")
        if len(parts) != 4:
            raise LoadError(f"expected 4 tab-separated fields, got {len(parts)}", line_no, path)
        user, item = _parse_index(parts[0], line_no, path), _parse_index(parts[1], line_no, path)
        rating = _parse_float(parts[2], line_no, path)
        if not (1 <= user <= n_users and 1 <= item <= n_items):
            raise LoadError(f"id pair ({user}, {item}) outside {n_users}x{n_items}", line_no, path)
        if (user, item) in seen:
            raise LoadError(f"user {user} rated item {item} twice", line_no, path)
        seen.add((user, item))
        rows.append(user - 1)
        cols.append(item - 1)
        values.append(1.0 if binarize else rating)
    logger.info("loaded %d ratings from %s", len(values), path)
    return sparse_from_triples((n_users, n_items), rows, cols, values)


# ------------------------------------------------------------------ graph description

def _require(obj: Dict, key: str, where: str):
    if key not in obj:
        raise ConfigParseError(f"missing required field '{key}'", f"{where}.{key}" if where else key)
    return obj[key]


def load_graph(source: Union[str, Dict], base_dir: str = ".", field_path: str = "graph") -> RelationGraph:
    """Relation graph from a JSON file path or an inline description

    {"entities": [{"id", "size"}], "views": [{"id", "row", "col", "path",
    "format", "datatype"}], "center_view": id}; view paths resolve relative to
    the graph file.
    """
    if isinstance(source, str):
        path = source if os.path.isabs(source) else os.path.join(base_dir, source)
        try:
            spec = json.loads(_read_text(path))
        except json.JSONDecodeError as err:
            raise LoadError(f"invalid JSON: {err.msg}", err.lineno, path) from err
        base_dir = os.path.dirname(os.path.abspath(path))
    elif isinstance(source, dict):
        spec = source
    else:
        raise ConfigParseError("must be a file path or an object", field_path)

    allowed = {"entities", "views", "center_view"}
    for key in spec:
        if key not in allowed:
            raise ConfigParseError(f"unknown field '{key}'", f"{field_path}.{key}")

    entities: List[EntityDecl] = []
    for i, e in enumerate(_require(spec, "entities", field_path)):
        where = f"{field_path}.entities[{i}]"
        entities.append(EntityDecl(str(_require(e, "id", where)), int(_require(e, "size", where))))

    sizes = {e.id: e.size for e in entities}
    views = []
    for i, v in enumerate(_require(spec, "views", field_path)):
        where = f"{field_path}.views[{i}]"
        unknown = set(v) - {"id", "row", "col", "path", "format", "datatype"}
        if unknown:
            raise ConfigParseError(f"unknown field '{sorted(unknown)[0]}'", f"{where}.{sorted(unknown)[0]}")
        fmt = v.get("format", "dense-csv")
        datatype = v.get("datatype", "real")
        if datatype not in DATATYPES:
            raise ConfigParseError(f"datatype must be one of {DATATYPES}", f"{where}.datatype")
        view_path = str(_require(v, "path", where))
        if not os.path.isabs(view_path):
            view_path = os.path.join(base_dir, view_path)
        shape = (sizes.get(v.get("row")), sizes.get(v.get("col")))
        data = load_matrix(view_path, fmt, shape if None not in shape else None, binarize=datatype == "binary")
        views.append(ViewDecl(str(_require(v, "id", where)), str(_require(v, "row", where)),
                              str(_require(v, "col", where)), data, datatype))
    return RelationGraph(tuple(entities), tuple(views), spec.get("center_view"))


# ------------------------------------------------------------------ weight bundles

def weights_to_arrays(bundles: Dict[str, AEWeights]) -> Dict[str, np.ndarray]:
    arrays = {}
    for entity, w in bundles.items():
        for i, (W, b) in enumerate(zip(w.weights, w.biases)):
            arrays[f"{entity}/W{i}"] = W
            arrays[f"{entity}/b{i}"] = b
    return arrays


def save_weights(path: str, bundles: Dict[str, AEWeights], plans: Dict[str, Any]):
    """All autoencoder weights plus their layer plans in one .npz"""
    buffer = io.BytesIO()
    arrays = weights_to_arrays(bundles)
    arrays["__plans__"] = np.array(json.dumps(plans, sort_keys=True))
    np.savez(buffer, **arrays)
    atomic_write_bytes(path, buffer.getvalue())


def load_weights(path: str, expected: Dict[str, AEWeights]) -> Dict[str, AEWeights]:
    """Weights for the given entities, checked against the shapes of `expected`"""
    try:
        bundle = np.load(path, allow_pickle=False)
    except OSError as err:
        raise LoadError(f"cannot read weights: {err}", None, path) from err
    out = {}
    with bundle:
        for entity, ref in expected.items():
            weights, biases = [], []
            for i, (W, b) in enumerate(zip(ref.weights, ref.biases)):
                try:
                    W_new, b_new = bundle[f"{entity}/W{i}"], bundle[f"{entity}/b{i}"]
                except KeyError:
                    raise LoadError(f"missing layer {i} for entity '{entity}'", None, path) from None
                if W_new.shape != W.shape or b_new.shape != b.shape:
                    raise ShapeError(f"layer {i} of '{entity}' does not match the network", W_new.shape, W.shape)
                weights.append(np.array(W_new, dtype=np.float64))
                biases.append(np.array(b_new, dtype=np.float64))
            out[entity] = AEWeights(weights, biases, ref.seed)
    return out
