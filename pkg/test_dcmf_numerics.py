#!/usr/bin/env python3
"""
Tests for the dense linear algebra and probability helpers
"""

import math

import numpy as np
import pytest
import scipy.sparse as sp

from dcmf_errors import DecompositionError, DomainError, ShapeError
from dcmf_numerics import (
    cholesky, cholesky_with_jitter, derive_rng, least_squares_solve, matmul, sparse_from_triples,
    sparsity, std_normal, to_dense,
)


def test_matmul_hand_example():
    assert np.array_equal(matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[1.0], [1.0]])),
                          np.array([[3.0], [7.0]]))


def test_matmul_identity_and_sparse_operand(rng):
    M = rng.normal(size=(3, 4))
    assert np.allclose(matmul(np.eye(3), M), M)
    assert np.allclose(matmul(sp.coo_matrix(np.eye(3)), M), M)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError) as err:
        matmul(np.ones((2, 3)), np.ones((2, 3)))
    assert "(2, 3) vs (2, 3)" in str(err.value)


def test_least_squares_exact_and_consistent(rng):
    A = np.array([[2.0, 1.0], [1.0, 3.0]])
    B = np.array([[1.0], [2.0]])
    assert np.allclose(A @ least_squares_solve(A, B), B)

    A = rng.normal(size=(10, 4))
    X0 = rng.normal(size=(4, 3))
    assert np.allclose(least_squares_solve(A, A @ X0), X0, atol=1e-8)


def test_least_squares_orthonormal_columns(rng):
    Q, _ = np.linalg.qr(rng.normal(size=(6, 3)))
    B = rng.normal(size=(6, 2))
    assert np.allclose(least_squares_solve(Q, B), Q.T @ B)


def test_least_squares_underdetermined_is_min_norm():
    A = np.array([[1.0, 1.0]])
    x = least_squares_solve(A, np.array([2.0]))
    assert np.allclose(x, [1.0, 1.0])


def test_cholesky_hand_example():
    L = cholesky(np.array([[4.0, 2.0], [2.0, 3.0]]))
    assert np.allclose(L, [[2.0, 0.0], [1.0, math.sqrt(2.0)]])
    assert np.allclose(cholesky(np.eye(3)), np.eye(3))


def test_cholesky_indefinite_reports_pivot():
    with pytest.raises(DecompositionError) as err:
        cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert err.value.pivot == 1


def test_cholesky_with_jitter_rescues_singular_matrix():
    S = np.ones((3, 3))
    L, jitter = cholesky_with_jitter(S)
    assert jitter > 0
    assert np.allclose(L @ L.T, S + jitter * np.eye(3))


def test_cholesky_with_jitter_gives_up():
    with pytest.raises(DecompositionError):
        cholesky_with_jitter(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_std_normal_values():
    pdf, cdf = std_normal(0.0)
    assert pdf == pytest.approx(0.3989422804, abs=1e-10)
    assert cdf == pytest.approx(0.5)
    pdf, cdf = std_normal(1.0)
    assert pdf == pytest.approx(0.24197, abs=1e-5)
    assert cdf == pytest.approx(0.84134, abs=1e-5)
    pdf, cdf = std_normal(np.inf)
    assert (pdf, cdf) == (0.0, 1.0)


def test_sparse_helpers():
    m = sparse_from_triples((2, 3), [0, 1], [2, 0], [5.0, 1.0])
    assert np.array_equal(to_dense(m), [[0, 0, 5], [1, 0, 0]])
    assert sparsity(m) == pytest.approx(4 / 6)
    assert sparsity(np.zeros((2, 2))) == 1.0
    with pytest.raises(DomainError):
        sparse_from_triples((2, 2), [0, 0], [1, 1], [1.0, 2.0])
    with pytest.raises(DomainError):
        sparse_from_triples((2, 2), [2], [0], [1.0])


def test_derive_rng_streams_are_stable_and_distinct():
    a = derive_rng(3, "init", "users").uniform(size=4)
    b = derive_rng(3, "init", "users").uniform(size=4)
    c = derive_rng(3, "init", "items").uniform(size=4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    with pytest.raises(DomainError):
        derive_rng(-1, "x")
