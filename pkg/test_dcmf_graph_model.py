#!/usr/bin/env python3
"""
Tests for the relation graph, concatenated matrices and entity diagnostics
"""

import numpy as np
import pytest

from dcmf_errors import DomainError, EntityLookupError, ViewLookupError
from dcmf_graph_model import (
    EntityDecl, RelationGraph, ViewDecl, build_concatenated_matrix, entity_diagnostics, extract_view,
    imbalance_ratio, mask_graph, max_abs_scale, validate_graph,
)


def _graph(sizes, wiring, center=None, fill=1.0):
    entities = tuple(EntityDecl(e, n) for e, n in sizes.items())
    views = tuple(ViewDecl(v, r, c, np.full((sizes[r], sizes[c]), fill)) for v, (r, c) in wiring.items())
    return RelationGraph(entities, views, center)


def test_recommendation_graph_is_valid(recommendation_graph):
    assert validate_graph(recommendation_graph).ok


def test_dimension_mismatch_is_reported():
    g = _graph({"a": 3, "b": 2}, {"X1": ("a", "b")})
    bad = g.replace_views([ViewDecl("X1", "a", "b", np.ones((4, 2)))])
    report = validate_graph(bad)
    assert report.kinds() == ["dimension-mismatch"]


def test_duplicate_pair_is_reported():
    g = _graph({"a": 3, "b": 2}, {"X1": ("a", "b")})
    g = g.replace_views(list(g.views) + [ViewDecl("X2", "b", "a", np.ones((2, 3)))])
    assert "duplicate-pair" in validate_graph(g).kinds()


def test_structural_findings():
    g = _graph({"a": 3, "b": 2, "c": 4}, {"X1": ("a", "b")})
    assert "isolated-entity" in validate_graph(g).kinds()

    g = _graph({"a": 3, "b": 2, "c": 4, "d": 1}, {"X1": ("a", "b"), "X2": ("c", "d")})
    assert "disconnected" in validate_graph(g).kinds()

    g = _graph({"a": 3, "b": 2}, {"X1": ("a", "b")}, center="X9")
    assert "dangling-id" in validate_graph(g).kinds()

    g = RelationGraph((EntityDecl("a", 2),), (ViewDecl("X1", "a", "a", np.ones((2, 2))),))
    assert "self-relation" in validate_graph(g).kinds()

    g = _graph({"a": 2, "b": 2}, {"X1": ("a", "b")}, fill=np.nan)
    assert "non-finite" in validate_graph(g).kinds()


def test_concatenation_row_entity():
    sizes = {"e1": 4, "e2": 3, "e3": 5, "e4": 2}
    g = _graph(sizes, {"X1": ("e1", "e2"), "X2": ("e1", "e3"), "X3": ("e1", "e4")})
    c = build_concatenated_matrix(g, "e1")
    assert c.shape == (4, 3 + 5 + 2)
    assert [s.view_id for s in c.segments] == ["X1", "X2", "X3"]
    assert [s.col_offset for s in c.segments] == [0, 3, 8]


def test_concatenation_transposes_for_column_entity(recommendation_graph):
    c = build_concatenated_matrix(recommendation_graph, "ifeat")
    assert np.array_equal(c.data, recommendation_graph.view("X3").data)

    c = build_concatenated_matrix(recommendation_graph, "items")
    assert c.shape == (10, 12 + 5)
    assert all(s.transposed for s in c.segments)
    assert np.array_equal(c.data[:, :12], recommendation_graph.view("X1").data.T)


def test_extract_view_inverts_concatenation(recommendation_graph):
    for e in recommendation_graph.entity_ids:
        c = build_concatenated_matrix(recommendation_graph, e)
        for v in recommendation_graph.incident_views(e):
            assert np.array_equal(extract_view(c, v.id), v.data)


def test_unknown_ids_raise_lookup_errors(recommendation_graph):
    with pytest.raises(EntityLookupError):
        build_concatenated_matrix(recommendation_graph, "nobody")
    with pytest.raises(ViewLookupError):
        recommendation_graph.view("X9")


def test_max_abs_scale_keeps_zero_columns():
    g = RelationGraph((EntityDecl("a", 2), EntityDecl("b", 3)),
                      (ViewDecl("X1", "a", "b", np.array([[2.0, 0.0, -4.0], [1.0, 0.0, 2.0]])),))
    scaled = max_abs_scale(build_concatenated_matrix(g, "a"))
    assert np.allclose(scaled.data, [[1.0, 0.0, -1.0], [0.5, 0.0, 0.5]])
    assert scaled.scaled


def test_mask_graph_zeroes_entries_only_in_copy(recommendation_graph):
    masked = mask_graph(recommendation_graph, [("X1", 0, 0), ("X1", 2, 3)])
    assert masked.view("X1").data[0, 0] == 0.0
    assert masked.view("X1").data[2, 3] == 0.0
    assert recommendation_graph.view("X1").data[0, 0] != 0.0
    assert masked.view("X2") is recommendation_graph.view("X2")


def test_entity_diagnostics():
    g = _graph({"e1": 6, "e2": 4, "e3": 3}, {"X1": ("e1", "e2"), "X2": ("e1", "e3")})
    d = entity_diagnostics(g, "e1")
    assert d.shape == (6, 4 + 3)
    assert d.interactions == 2
    assert d.sparsity == 0.0
    assert d.as_record()["q"] == 7

    g = RelationGraph((EntityDecl("a", 3), EntityDecl("b", 3)), (ViewDecl("X1", "a", "b", np.zeros((3, 3))),))
    assert entity_diagnostics(g, "a").sparsity == 1.0


def test_shape_risk_flags():
    g = _graph({"wide": 2, "tall": 40}, {"X1": ("wide", "tall")})
    assert entity_diagnostics(g, "wide").risk.startswith("under-fitting")
    assert entity_diagnostics(g, "tall").risk.startswith("over-fitting")


def test_imbalance_ratio():
    assert imbalance_ratio(1000, 2000) == pytest.approx(0.5)
    assert imbalance_ratio(250, 2000) == pytest.approx(0.875)
    assert imbalance_ratio(7, 7) == 0.0
    with pytest.raises(DomainError):
        imbalance_ratio(0, 5)
