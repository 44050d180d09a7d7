"""Dense and sparse direct solvers used by the element and global stages."""

from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SingularMatrixError(np.linalg.LinAlgError):
    pass


def dense_solve(matrix, rhs) -> np.ndarray:
    """LU solve with partial pivoting; raises on a pivot below 1e-14 of the matrix scale."""
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix must be square, got shape {a.shape}")
    if a.shape[0] > 64:
        raise ValueError("dense_solve is meant for local systems of size <= 64")
    with warnings.catch_warnings():
        # exact zero pivots are reported below with a clearer message
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(a, check_finite=True)
    scale = np.abs(a).max()
    pivots = np.abs(np.diag(lu))
    if scale == 0 or pivots.min() < 1e-14 * scale:
        i = int(np.argmin(pivots))
        raise SingularMatrixError(f"numerically singular matrix (pivot {pivots[i]:.3e} at row {i})")
    return sla.lu_solve((lu, piv), rhs)


def csr_from_triplets(rows, cols, vals, shape) -> sp.csr_matrix:
    """CSR matrix with duplicates summed and column indices sorted in each row."""
    mat = sp.coo_matrix((np.asarray(vals, dtype=float), (rows, cols)), shape=shape).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


class SparseLU:
    """Sparse LU factorisation (SuperLU with COLAMD ordering)."""

    def __init__(self, matrix):
        mat = sp.csc_matrix(matrix)
        if mat.shape[0] != mat.shape[1]:
            raise ValueError(f"matrix must be square, got shape {mat.shape}")
        self.shape = mat.shape
        self.matrix = mat
        empty_rows = np.flatnonzero(np.diff(sp.csr_matrix(mat).indptr) == 0)
        if len(empty_rows):
            raise SingularMatrixError(f"structurally singular: row {int(empty_rows[0])} is empty")
        try:
            self._lu = spla.splu(mat, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SingularMatrixError(f"sparse LU failed: {exc}") from exc
        udiag = np.abs(self._lu.U.diagonal())
        scale = np.abs(mat.data).max() if mat.nnz else 0.0
        if scale == 0 or udiag.min() < 1e-14 * scale:
            i = int(np.argmin(udiag))
            raise SingularMatrixError(f"numerically singular: pivot {udiag[i]:.3e} at position {i}")

    def solve(self, rhs) -> np.ndarray:
        return self._lu.solve(np.asarray(rhs, dtype=float))


def sparse_solve(matrix, rhs, rtol: float = 1e-10) -> np.ndarray:
    rhs = np.asarray(rhs, dtype=float)
    if matrix.shape[0] == 0:
        return np.zeros(0)
    lu = SparseLU(matrix)
    x = lu.solve(rhs)
    bnorm = np.linalg.norm(rhs)
    res = np.linalg.norm(matrix @ x - rhs)
    if bnorm > 0 and res > rtol * bnorm:
        # one step of iterative refinement before giving up
        x = x + lu.solve(rhs - matrix @ x)
        res = np.linalg.norm(matrix @ x - rhs)
        if res > rtol * bnorm:
            raise SingularMatrixError(f"sparse solve residual {res / bnorm:.2e} exceeds {rtol:.0e}")
    return x
