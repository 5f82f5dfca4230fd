#!/usr/bin/env python3
"""
Shared fixtures for the dCMF tests
"""

import numpy as np
import pytest

from dcmf_graph_model import EntityDecl, RelationGraph, ViewDecl


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: acceptance-scale runs (deselect with -m 'not slow')")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def recommendation_graph(rng):
    """X1(users, items), X2(users, user features), X3(item features, items)"""
    sizes = {"users": 12, "items": 10, "ufeat": 6, "ifeat": 5}
    entities = tuple(EntityDecl(e, n) for e, n in sizes.items())
    views = (
        ViewDecl("X1", "users", "items", rng.uniform(0, 1, (12, 10))),
        ViewDecl("X2", "users", "ufeat", rng.uniform(0, 1, (12, 6))),
        ViewDecl("X3", "ifeat", "items", rng.uniform(0, 1, (5, 10))),
    )
    return RelationGraph(entities, views, "X1")


@pytest.fixture
def single_view_graph(rng):
    X = rng.uniform(0, 1, (8, 6))
    return RelationGraph((EntityDecl("rows", 8), EntityDecl("cols", 6)),
                         (ViewDecl("X1", "rows", "cols", X),), "X1")


@pytest.fixture
def low_rank_graph():
    """Exactly rank-3 single view, 30 x 20"""
    r = np.random.default_rng(7)
    A = r.uniform(-0.5, 0.5, (30, 3))
    B = r.uniform(-0.5, 0.5, (20, 3))
    return RelationGraph((EntityDecl("rows", 30), EntityDecl("cols", 20)),
                         (ViewDecl("X1", "rows", "cols", A @ B.T),), "X1")
