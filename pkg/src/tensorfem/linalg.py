"""Compressed-row sparse matrices and a (preconditioned) conjugate gradient solver."""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

# every live tracker receives (kind, shape, nnz) for each SparseMatrix built
_trackers: list[list] = []


@contextlib.contextmanager
def track_sparse_allocations():
    """Record every :class:`SparseMatrix` constructed inside the block."""
    log: list[tuple[str, tuple[int, int], int]] = []
    _trackers.append(log)
    try:
        yield log
    finally:
        _trackers.remove(log)


class LinearOperator:
    """Anything with a shape and a linear action ``y = A x``."""

    def __init__(self, shape, matvec: Callable[[np.ndarray], np.ndarray] | None = None):
        self.shape = (int(shape[0]), int(shape[1]))
        self._matvec = matvec

    def matvec(self, x: np.ndarray) -> np.ndarray:
        if self._matvec is None:
            raise NotImplementedError
        return self._matvec(x)

    def _check_vec(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.shape[1],):
            raise ValueError(f"vector of length {x.shape} does not match operator shape {self.shape}")
        return x

    def __matmul__(self, x):
        return self.matvec(self._check_vec(x))

    def __call__(self, x):
        return self @ x


class SparseMatrix(LinearOperator):
    """CSR matrix with sorted, unique column indices in every row."""

    def __init__(self, indptr, indices, data, shape, kind: str = "generic"):
        super().__init__(shape)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.data = np.asarray(data, dtype=float)
        self.kind = kind
        if len(self.indptr) != self.shape[0] + 1:
            raise ValueError("indptr length must be rows + 1")
        self._rows = np.repeat(np.arange(self.shape[0]), np.diff(self.indptr))
        for log in _trackers:
            log.append((kind, self.shape, self.nnz))

    @classmethod
    def from_coo(cls, rows, cols, vals, shape, kind: str = "generic") -> "SparseMatrix":
        """Build from triplets; duplicate entries are summed."""
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        vals = np.asarray(vals, dtype=float).ravel()
        m, n = int(shape[0]), int(shape[1])
        if rows.size and (rows.min() < 0 or rows.max() >= m or cols.min() < 0 or cols.max() >= n):
            raise ValueError(f"triplet index outside shape {shape}")
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if rows.size:
            first = np.ones(rows.size, dtype=bool)
            first[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
            starts = np.flatnonzero(first)
            vals = np.add.reduceat(vals, starts)
            rows, cols = rows[starts], cols[starts]
        indptr = np.zeros(m + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=m), out=indptr[1:])
        return cls(indptr, cols, vals, (m, n), kind)

    @classmethod
    def identity(cls, n: int, kind: str = "generic") -> "SparseMatrix":
        return cls(np.arange(n + 1), np.arange(n), np.ones(n), (n, n), kind)

    @classmethod
    def from_dense(cls, A, kind: str = "generic") -> "SparseMatrix":
        A = np.asarray(A, dtype=float)
        r, c = np.nonzero(A)
        return cls.from_coo(r, c, A[r, c], A.shape, kind)

    @property
    def nnz(self) -> int:
        return len(self.data)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        np.add.at(out, (self._rows, self.indices), self.data)
        return out

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return np.bincount(self._rows, weights=self.data * x[self.indices], minlength=self.shape[0])

    def transpose(self, kind: str | None = None) -> "SparseMatrix":
        return SparseMatrix.from_coo(
            self.indices, self._rows, self.data, self.shape[::-1], kind or self.kind
        )

    @property
    def T(self) -> "SparseMatrix":
        return self.transpose()

    def matmul(self, other: "SparseMatrix", kind: str | None = None) -> "SparseMatrix":
        """Sparse product ``self @ other``."""
        if self.shape[1] != other.shape[0]:
            raise ValueError(f"shape mismatch {self.shape} @ {other.shape}")
        counts = np.diff(other.indptr)[self.indices]
        total = int(counts.sum())
        starts = other.indptr[self.indices]
        offsets = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
        idx = np.repeat(starts, counts) + offsets
        rows = np.repeat(self._rows, counts)
        vals = np.repeat(self.data, counts) * other.data[idx]
        return SparseMatrix.from_coo(
            rows, other.indices[idx], vals, (self.shape[0], other.shape[1]), kind or self.kind
        )

    def diagonal(self) -> np.ndarray:
        out = np.zeros(min(self.shape))
        on = self._rows == self.indices
        out[self.indices[on]] = self.data[on]
        return out

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        s = slice(self.indptr[i], self.indptr[i + 1])
        return self.indices[s], self.data[s]

    def scaled(self, alpha: float) -> "SparseMatrix":
        return SparseMatrix(self.indptr, self.indices, alpha * self.data, self.shape, self.kind)

    def eliminate(self, ess: np.ndarray) -> "SparseMatrix":
        """Zero rows and columns in ``ess`` and put 1 on their diagonal."""
        ess = np.asarray(ess, dtype=np.int64)
        mark = np.zeros(self.shape[0], dtype=bool)
        mark[ess] = True
        keep = ~(mark[self._rows] | mark[self.indices])
        rows = np.concatenate([self._rows[keep], ess])
        cols = np.concatenate([self.indices[keep], ess])
        vals = np.concatenate([self.data[keep], np.ones(len(ess))])
        return SparseMatrix.from_coo(rows, cols, vals, self.shape, self.kind)


def spmv(A: SparseMatrix, x) -> np.ndarray:
    return A @ x


def sparse_triple_product(P: SparseMatrix, A: SparseMatrix, kind: str = "system") -> SparseMatrix:
    """``P^T A P`` via two sparse products."""
    if A.shape[0] != A.shape[1] or A.shape[1] != P.shape[0]:
        raise ValueError(f"cannot form P^T A P with P {P.shape} and A {A.shape}")
    AP = A.matmul(P, kind=kind)
    return P.transpose(kind=kind).matmul(AP, kind=kind)


class CGBreakdownError(ArithmeticError):
    """Non-finite or non-positive curvature encountered in CG."""


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    converged: bool
    residual_norm: float


def cg_solve(
    A,
    b,
    tol: float = 1e-12,
    max_iters: int = 2000,
    precond: np.ndarray | None = None,
    callback: Callable[[np.ndarray], None] | None = None,
) -> CGResult:
    """Preconditioned conjugate gradients from a zero initial guess.

    Stops once the (unpreconditioned) residual satisfies
    ``||b - A x|| <= tol * ||b||``.  ``precond`` is an optional diagonal used
    as a Jacobi preconditioner.  On hitting ``max_iters`` the iterate with the
    smallest residual is returned with ``converged=False``.
    """
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"operator shape {A.shape} does not match rhs length {n}")
    inv_diag = None
    if precond is not None:
        precond = np.asarray(precond, dtype=float)
        if precond.shape != (n,) or np.any(precond == 0):
            raise ValueError("Jacobi preconditioner needs a nonzero diagonal of matching length")
        inv_diag = 1.0 / precond
    x = np.zeros(n)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return CGResult(x, 0, True, 0.0)
    r = b.copy()
    z = r * inv_diag if inv_diag is not None else r
    d = z.copy()
    rz = float(r @ z)
    best_x, best_res = x.copy(), bnorm
    for it in range(1, max_iters + 1):
        Ad = A @ d
        dAd = float(d @ Ad)
        if not np.isfinite(dAd) or dAd <= 0.0:
            raise CGBreakdownError(f"CG breakdown at iteration {it}: d^T A d = {dAd}")
        alpha = rz / dAd
        x += alpha * d
        r -= alpha * Ad
        res = float(np.linalg.norm(r))
        if not np.isfinite(res):
            raise CGBreakdownError(f"CG produced a non-finite residual at iteration {it}")
        if callback is not None:
            callback(x)
        if res < best_res:
            best_x, best_res = x.copy(), res
        if res <= tol * bnorm:
            return CGResult(x, it, True, res)
        z = r * inv_diag if inv_diag is not None else r
        rz_new = float(r @ z)
        d = z + (rz_new / rz) * d
        rz = rz_new
    return CGResult(best_x, max_iters, False, best_res)
