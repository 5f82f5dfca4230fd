#!/usr/bin/env python3
"""
dCMF Numerics - Dense Linear Algebra & Probability Kernel
=========================================================

Matrix products, least squares, Cholesky with pivot reporting, the standard
normal pdf/cdf and per-consumer random streams. Everything is float64.

A RealMatrix is either a dense ``numpy.ndarray`` or a ``scipy.sparse``
coordinate matrix; every function here accepts both.

This program is free software: you can redistribute it and/or modify
it under the terms of the GNU General Public License as published by
the Free Software Foundation, either version 3 of the License, or
(at your option) any later version.
"""

import logging
import zlib
from typing import Tuple, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.linalg import lapack
from scipy.special import ndtr

from dcmf_errors import DecompositionError, DomainError, ShapeError

logger = logging.getLogger(__name__)

RealMatrix = Union[np.ndarray, sp.spmatrix]

_SQRT_2PI = np.sqrt(2.0 * np.pi)


def to_dense(m: RealMatrix) -> np.ndarray:
    """Dense float64 copy-free view when possible"""
    if sp.issparse(m):
        return np.asarray(m.toarray(), dtype=np.float64)
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError("expected a 2-D matrix", arr.shape)
    return arr


def to_sparse(m: RealMatrix) -> sp.coo_matrix:
    """Sparse-coordinate form with explicit zeros dropped"""
    coo = sp.coo_matrix(m, dtype=np.float64)
    coo.eliminate_zeros()
    return coo


def sparse_from_triples(shape: Tuple[int, int], rows, cols, values) -> sp.coo_matrix:
    """Build a coordinate matrix, rejecting out-of-range and duplicate coordinates"""
    n_rows, n_cols = shape
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    if n_rows < 0 or n_cols < 0:
        raise DomainError(f"negative matrix shape {shape}")
    if rows.size and (rows.min() < 0 or rows.max() >= n_rows or cols.min() < 0 or cols.max() >= n_cols):
        raise DomainError(f"coordinate outside {n_rows}x{n_cols}")
    flat = rows * max(n_cols, 1) + cols
    if np.unique(flat).size != flat.size:
        raise DomainError("duplicate sparse coordinates")
    return sp.coo_matrix((values, (rows, cols)), shape=(n_rows, n_cols))


def sparsity(m: RealMatrix) -> float:
    """Fraction of zero entries"""
    n_rows, n_cols = m.shape
    total = n_rows * n_cols
    if total == 0:
        return 0.0
    if sp.issparse(m):
        nonzero = to_sparse(m).nnz
    else:
        nonzero = int(np.count_nonzero(m))
    return 1.0 - nonzero / total


def matmul(a: RealMatrix, b: RealMatrix) -> np.ndarray:
    """Standard matrix product with dense output"""
    if a.shape[1] != b.shape[0]:
        raise ShapeError("cannot multiply", a.shape, b.shape)
    if sp.issparse(a) or sp.issparse(b):
        product = a @ b
        return to_dense(product)
    return np.asarray(a, dtype=np.float64) @ np.asarray(b, dtype=np.float64)


def least_squares_solve(A: RealMatrix, B: RealMatrix) -> np.ndarray:
    """Minimum-norm X minimizing ||A X - B||_F (SVD driver, rank-deficient safe)"""
    a = to_dense(A)
    b = np.asarray(to_dense(B) if sp.issparse(B) else B, dtype=np.float64)
    vector_rhs = b.ndim == 1
    if vector_rhs:
        b = b[:, None]
    if a.shape[0] != b.shape[0]:
        raise ShapeError("least squares row mismatch", a.shape, b.shape)
    if a.size == 0:
        x = np.zeros((a.shape[1], b.shape[1]))
    else:
        x, _, rank, _ = scipy.linalg.lstsq(a, b, lapack_driver="gelsd")
        if rank < min(a.shape):
            logger.debug("least squares system is rank deficient (rank %d of %s)", rank, a.shape)
    return x[:, 0] if vector_rhs else x


def cholesky(S: RealMatrix) -> np.ndarray:
    """Lower-triangular L with L L^T = S; DecompositionError carries the failing pivot"""
    s = to_dense(S)
    if s.shape[0] != s.shape[1]:
        raise ShapeError("cholesky needs a square matrix", s.shape)
    if not np.allclose(s, s.T, rtol=1e-10, atol=1e-12):
        raise DomainError("cholesky needs a symmetric matrix")
    if s.shape[0] == 0:
        return s.copy()
    factor, info = lapack.dpotrf(s, lower=1, clean=1)
    if info > 0:
        raise DecompositionError(int(info) - 1)
    if info < 0:
        raise DomainError(f"illegal argument {-info} passed to dpotrf")
    return factor


def cholesky_with_jitter(S: RealMatrix, start: float = 1e-10, limit: float = 1e-4) -> Tuple[np.ndarray, float]:
    """Cholesky with diagonal jitter escalated x10 from start to limit"""
    s = to_dense(S)
    try:
        return cholesky(s), 0.0
    except DecompositionError as err:
        last = err
    eye = np.eye(s.shape[0])
    jitter = start
    while jitter <= limit * (1 + 1e-12):
        try:
            factor = cholesky(s + jitter * eye)
            logger.debug("cholesky succeeded with jitter %.1e", jitter)
            return factor, jitter
        except DecompositionError as err:
            last = err
        jitter *= 10.0
    raise DecompositionError(last.pivot, f"not positive definite even with jitter {limit:.0e} (pivot {last.pivot})")


def std_normal(x):
    """Standard normal (pdf, cdf); vectorized"""
    x = np.asarray(x, dtype=np.float64)
    pdf = np.exp(-0.5 * x * x) / _SQRT_2PI
    cdf = ndtr(x)
    if pdf.ndim == 0:
        return float(pdf), float(cdf)
    return pdf, cdf


def derive_rng(seed: int, *consumer: str) -> np.random.Generator:
    """Counter-based random stream for one consumer of the run seed"""
    if seed < 0:
        raise DomainError(f"seed must be non-negative, got {seed}")
    key = tuple(zlib.crc32(part.encode("utf-8")) for part in consumer)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=key)))
