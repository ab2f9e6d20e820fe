"""Sparse storage, matrix-vector products and linear solves with cached factorizations."""

import logging
import threading
from typing import Dict, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse import linalg as spla

from errors import DimensionMismatch, NoConvergence, NumericalError, SingularMatrix
from models import SolverMode, SolverSettings

logger = logging.getLogger(__name__)


def as_csr(matrix) -> sp.csr_matrix:
    """Canonical CSR form: summed duplicates, sorted column indices, finite values"""
    csr = sp.csr_matrix(matrix, dtype=float, copy=True)
    csr.sum_duplicates()
    csr.sort_indices()
    if not np.all(np.isfinite(csr.data)):
        raise NumericalError("matrix contains non-finite entries")
    return csr


def matvec(matrix, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if matrix.shape[1] != x.shape[0]:
        raise DimensionMismatch(f"matrix of shape {matrix.shape} cannot act on a vector of length {x.shape[0]}")
    return np.asarray(matrix @ x)


def has_constant_kernel(matrix, tol: float = 1e-10) -> bool:
    """True when the constant vector is (numerically) in the kernel"""
    ones = np.ones(matrix.shape[0])
    scale = max(abs(matrix).max(), 1.0) * np.sqrt(matrix.shape[0])
    return bool(np.linalg.norm(matrix @ ones) <= tol * scale)


class SolverHandle:
    """Linear solver with a factorization cache keyed by matrix identity"""

    def __init__(self, mode: SolverMode = SolverMode.DIRECT, tol: float = 1e-12,
                 max_iter: int = 20000, ordering: str = "NATURAL"):
        self.mode = SolverMode(mode)
        self.tol = tol
        self.max_iter = max_iter
        self.ordering = ordering
        # id -> (matrix, factorization); holding the matrix keeps its id from being reused
        self._factorizations: Dict[int, Tuple[object, spla.SuperLU]] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_settings(cls, settings: SolverSettings, norm_solver: bool = False) -> "SolverHandle":
        mode = settings.norm_mode if norm_solver else settings.mode
        return cls(mode=mode, tol=settings.tol, max_iter=settings.max_iter, ordering=settings.ordering)

    def factorization(self, matrix) -> spla.SuperLU:
        key = id(matrix)
        with self._lock:
            cached = self._factorizations.get(key)
            if cached is not None and cached[0] is matrix:
                return cached[1]
        try:
            factor = spla.splu(sp.csc_matrix(matrix), permc_spec=self.ordering)
        except RuntimeError as e:
            logger.error(f"Sparse LU factorization failed: {e}")
            raise SingularMatrix(f"factorization failed: {e}") from e
        with self._lock:
            self._factorizations[key] = (matrix, factor)
        return factor

    def release(self, matrix) -> None:
        """Drop the cached factorization of one matrix"""
        with self._lock:
            self._factorizations.pop(id(matrix), None)

    def clear(self) -> None:
        with self._lock:
            self._factorizations.clear()

    def solve(self, matrix, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        n_rows, n_cols = matrix.shape
        if n_rows != n_cols:
            raise DimensionMismatch(f"cannot solve with a non-square matrix of shape {matrix.shape}")
        if b.shape[0] != n_rows:
            raise DimensionMismatch(f"right-hand side of length {b.shape[0]} for a {n_rows}x{n_cols} matrix")
        if not np.any(b):
            return np.zeros_like(b)

        if self.mode == SolverMode.DIRECT:
            x = self.factorization(matrix).solve(b)
            if not np.all(np.isfinite(x)):
                raise SingularMatrix("direct solve produced non-finite values")
            return x
        return self._solve_iterative(matrix, b)

    def _solve_iterative(self, matrix, b: np.ndarray) -> np.ndarray:
        iterations = 0

        def count(_):
            nonlocal iterations
            iterations += 1

        diagonal = matrix.diagonal()
        if np.any(diagonal == 0.0):
            preconditioner = None
        else:
            inverse_diagonal = 1.0 / diagonal
            preconditioner = spla.LinearOperator(matrix.shape, matvec=lambda r: inverse_diagonal * r)

        if self.mode == SolverMode.ITERATIVE_SPD:
            x, info = spla.cg(matrix, b, rtol=self.tol, atol=0.0, maxiter=self.max_iter,
                              M=preconditioner, callback=count)
        else:
            x, info = spla.gmres(matrix, b, rtol=self.tol, atol=0.0, restart=50, maxiter=self.max_iter,
                                 M=preconditioner, callback=count, callback_type="pr_norm")
        if info > 0:
            logger.error(f"{self.mode.value} solver stopped after {iterations} iterations")
            raise NoConvergence(f"{self.mode.value} solver did not reach tol {self.tol}", iterations=iterations)
        if info < 0 or not np.all(np.isfinite(x)):
            raise SingularMatrix(f"{self.mode.value} solver broke down (info = {info})")
        return x


def solve(matrix, b: np.ndarray, handle: Optional[SolverHandle] = None) -> np.ndarray:
    return (handle or SolverHandle()).solve(matrix, b)
