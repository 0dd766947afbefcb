"""Sparse storage, products and direct factorizations.

Matrices are plain :class:`scipy.sparse.csr_matrix` objects with sorted,
duplicate-free column indices.  Factorizations wrap SuperLU (sparse) and
LAPACK Cholesky (dense) behind a single :class:`DirectFactor` type.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

SparseMat = sp.csr_matrix


class SparseCoreError(Exception):
    pass


class DimensionMismatch(SparseCoreError, ValueError):
    pass


class SingularMatrix(SparseCoreError):
    """Raised when a factorization meets an exactly zero pivot."""

    def __init__(self, message: str, pivot: int | None = None):
        super().__init__(message)
        self.pivot = pivot


class NotPositiveDefinite(SparseCoreError):
    def __init__(self, message: str, pivot: int | None = None):
        super().__init__(message)
        self.pivot = pivot


def as_csr(A) -> SparseMat:
    """Return ``A`` as canonical CSR (sorted indices, no duplicates)."""
    A = sp.csr_matrix(A, dtype=np.float64)
    A.sum_duplicates()
    A.sort_indices()
    return A


def spmv(A: SparseMat, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"spmv: matrix has {A.shape[1]} columns, vector has {x.shape[0]} entries")
    return A @ x


def spmv_transpose(A: SparseMat, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != A.shape[0]:
        raise DimensionMismatch(f"spmv_transpose: matrix has {A.shape[0]} rows, vector has {x.shape[0]} entries")
    return A.T @ x


@dataclass(frozen=True)
class DirectFactor:
    """An immutable factorization exposing ``solve``.

    ``kind`` is one of ``"spd-cholesky"``, ``"symmetric-indefinite"`` or
    ``"dense-cholesky"``.  ``perm`` is the fill-reducing column permutation
    (identity for the dense case).
    """

    kind: str
    n: int
    perm: np.ndarray
    _solve: Callable[[np.ndarray], np.ndarray] = field(repr=False)

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=np.float64)
        if b.shape[0] != self.n:
            raise DimensionMismatch(f"solve: factor has size {self.n}, right-hand side has {b.shape[0]} rows")
        if self.n == 0:
            return np.zeros_like(b)
        return self._solve(b)


def _symmetric_part_from_triangle(A: SparseMat) -> SparseMat:
    # Build the matrix from its lower triangle only, so that factor(A) and
    # factor(symmetrize(A)) see identical input.
    L = sp.tril(A, format="csr")
    L.eliminate_zeros()
    S = as_csr(L + sp.triu(L.T, 1))
    S.eliminate_zeros()
    return S


def _zero_pivot_index(A: SparseMat) -> int | None:
    if A.shape[0] > 4000:
        return None
    _, _, info = scipy.linalg.lapack.dgetrf(A.toarray())
    return int(info) - 1 if info > 0 else None


def factor_sym_indef(A, symmetric: bool = True) -> DirectFactor:
    """Factor a symmetric indefinite (saddle-point) matrix.

    Uses sparse LU with threshold partial pivoting and an approximate
    minimum-degree column ordering (COLAMD), which gives about half the fill
    of minimum degree on ``A + A^T`` for Stokes saddle blocks.  With ``symmetric=True`` only
    the lower triangle of ``A`` is read.
    """
    A = as_csr(A)
    n, m = A.shape
    if n != m:
        raise DimensionMismatch(f"factor_sym_indef: matrix is {n}x{m}")
    if symmetric:
        A = _symmetric_part_from_triangle(A)
    if n == 0:
        return DirectFactor("symmetric-indefinite", 0, np.zeros(0, dtype=int), lambda b: b)
    try:
        lu = spla.splu(A.tocsc(), permc_spec="COLAMD", diag_pivot_thresh=0.1)
    except RuntimeError as exc:
        raise SingularMatrix(f"factor_sym_indef: {exc}", pivot=_zero_pivot_index(A)) from exc
    return DirectFactor("symmetric-indefinite", n, lu.perm_c.copy(), lu.solve)


def factor_spd(A) -> DirectFactor:
    """Cholesky-type factorization of a sparse SPD matrix.

    Symmetric minimum-degree ordering without pivoting gives ``P A P^T = L U``
    with ``U = D L^T``; a non-positive entry of ``D`` means ``A`` is not
    positive definite.
    """
    A = _symmetric_part_from_triangle(as_csr(A))
    n, m = A.shape
    if n != m:
        raise DimensionMismatch(f"factor_spd: matrix is {n}x{m}")
    if n == 0:
        return DirectFactor("spd-cholesky", 0, np.zeros(0, dtype=int), lambda b: b)
    try:
        lu = spla.splu(
            A.tocsc(),
            permc_spec="MMD_AT_PLUS_A",
            diag_pivot_thresh=0.0,
            options={"SymmetricMode": True},
        )
    except RuntimeError as exc:
        raise NotPositiveDefinite(f"factor_spd: {exc}", pivot=_zero_pivot_index(A)) from exc
    if not (np.all(lu.perm_r == lu.perm_c)):
        raise NotPositiveDefinite("factor_spd: factorization required row pivoting")
    d = lu.U.diagonal()
    bad = np.flatnonzero(d <= 0.0)
    if bad.size:
        raise NotPositiveDefinite(
            f"factor_spd: non-positive pivot {d[bad[0]]:.3e} at position {bad[0]}", pivot=int(bad[0])
        )
    return DirectFactor("spd-cholesky", n, lu.perm_c.copy(), lu.solve)


def dense_factor_spd(A) -> DirectFactor:
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[0]
    if A.ndim != 2 or A.shape[1] != n:
        raise DimensionMismatch(f"dense_factor_spd: matrix has shape {A.shape}")
    if n == 0:
        return DirectFactor("dense-cholesky", 0, np.zeros(0, dtype=int), lambda b: b)
    c, info = scipy.linalg.lapack.dpotrf(A, lower=True, clean=True)
    if info > 0:
        raise NotPositiveDefinite(f"dense_factor_spd: leading minor {info} is not positive", pivot=int(info) - 1)
    if info < 0:
        raise SparseCoreError(f"dense_factor_spd: dpotrf argument {-info} invalid")
    cf = (c, True)
    return DirectFactor("dense-cholesky", n, np.arange(n), lambda b: scipy.linalg.cho_solve(cf, b))


def write_matrix_market(path: str | Path, A) -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), symmetry="general", precision=17)


def read_matrix_market(path: str | Path) -> SparseMat:
    return as_csr(scipy.io.mmread(str(path)))
