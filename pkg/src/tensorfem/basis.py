"""1D quadrature rules and Lagrange bases, plus the 2D tensor-product contractions.

Everything lives on the reference interval [0, 1]; rules computed on [-1, 1]
are mapped affinely.  2D element arrays are indexed ``V[iy, ix]`` so that a
flattened array is lexicographic with x running fastest.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

_NEWTON_TOL = 1e-15
_NEWTON_MAXITER = 100


class NodeKind(str, Enum):
    GAUSS_LOBATTO = "gausslobatto"
    GAUSS_LEGENDRE = "gausslegendre"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class QuadratureRule1D:
    points: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.points)


def _legendre(n: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return P_n(x), P_{n-1}(x) and P_n'(x) by the three-term recurrence."""
    p0 = np.ones_like(x)
    if n == 0:
        return p0, np.zeros_like(x), np.zeros_like(x)
    p1 = x.copy()
    for k in range(2, n + 1):
        p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
    # derivative from (1 - x^2) P_n' = n (P_{n-1} - x P_n)
    with np.errstate(divide="ignore", invalid="ignore"):
        dp = n * (p0 - x * p1) / (1.0 - x * x)
    return p1, p0, dp


def _newton(update, x: np.ndarray) -> np.ndarray:
    for _ in range(_NEWTON_MAXITER):
        dx = update(x)
        x = x - dx
        if np.max(np.abs(dx)) <= _NEWTON_TOL:
            break
    return x


def gauss_legendre(n: int) -> QuadratureRule1D:
    """n-point Gauss-Legendre rule on [0, 1], exact up to degree 2n-1."""
    if n < 1:
        raise ValueError(f"Gauss-Legendre rule needs n >= 1, got {n}")
    k = np.arange(1, n + 1)
    x = -np.cos(np.pi * (k - 0.25) / (n + 0.5))

    def step(x):
        p, _, dp = _legendre(n, x)
        return p / dp

    x = _newton(step, x)
    # enforce exact symmetry about the midpoint
    x = 0.5 * (x - x[::-1])
    _, _, dp = _legendre(n, x)
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    w = 0.5 * (w + w[::-1])
    return QuadratureRule1D(points=0.5 * (x + 1.0), weights=0.5 * w)


def gauss_lobatto(n: int) -> QuadratureRule1D:
    """n-point Gauss-Lobatto rule on [0, 1] (endpoints included), exact up to degree 2n-3."""
    if n < 2:
        raise ValueError(f"Gauss-Lobatto rule needs n >= 2, got {n}")
    m = n - 1
    x = -np.cos(np.pi * np.arange(n) / m)
    interior = x[1:-1]
    if len(interior):

        def step(x):
            # Newton on q(x) = P_m'(x); q' from the Legendre ODE
            p, _, dp = _legendre(m, x)
            ddp = (2.0 * x * dp - m * (m + 1) * p) / (1.0 - x * x)
            return dp / ddp

        interior = _newton(step, interior)
        interior = 0.5 * (interior - interior[::-1])
    x = np.concatenate(([-1.0], interior, [1.0]))
    p, _, _ = _legendre(m, x)
    w = 2.0 / (m * n * p * p)
    w = 0.5 * (w + w[::-1])
    t = 0.5 * (x + 1.0)
    t[0], t[-1] = 0.0, 1.0
    return QuadratureRule1D(points=t, weights=0.5 * w)


def default_quadrature(order: int) -> QuadratureRule1D:
    """Rule used by the order-``order`` forms: ``order + 2`` Gauss-Legendre points."""
    return gauss_legendre(order + 2)


def _nodes(order: int, kind: NodeKind) -> np.ndarray:
    if order == 0:
        return np.array([0.5])
    if kind is NodeKind.GAUSS_LOBATTO:
        return gauss_lobatto(order + 1).points
    if kind is NodeKind.GAUSS_LEGENDRE:
        return gauss_legendre(order + 1).points
    return np.linspace(0.0, 1.0, order + 1)


@dataclass(frozen=True)
class Basis1D:
    """Nodal Lagrange basis of degree ``order`` in barycentric form."""

    order: int
    kind: NodeKind = NodeKind.GAUSS_LOBATTO
    nodes: np.ndarray = field(init=False, repr=False, compare=False)
    _bary: np.ndarray = field(init=False, repr=False, compare=False)
    _dmat: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.order < 0:
            raise ValueError(f"basis order must be >= 0, got {self.order}")
        kind = NodeKind(self.kind)
        object.__setattr__(self, "kind", kind)
        x = _nodes(self.order, kind)
        diff = x[:, None] - x[None, :]
        np.fill_diagonal(diff, 1.0)
        bary = 1.0 / np.prod(diff, axis=1)
        # differentiation matrix at the nodes: D[i, j] = l_j'(x_i)
        dmat = (bary[None, :] / bary[:, None]) / diff
        np.fill_diagonal(dmat, 0.0)
        np.fill_diagonal(dmat, -dmat.sum(axis=1))
        object.__setattr__(self, "nodes", x)
        object.__setattr__(self, "_bary", bary)
        object.__setattr__(self, "_dmat", dmat)

    @property
    def size(self) -> int:
        return self.order + 1

    def eval(self, x) -> np.ndarray:
        """Basis values, shape ``(len(x), order + 1)``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        diff = x[:, None] - self.nodes[None, :]
        exact = diff == 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = self._bary[None, :] / diff
            out = terms / terms.sum(axis=1, keepdims=True)
        hit = exact.any(axis=1)
        out[hit] = exact[hit].astype(float)
        return out

    def deriv(self, x) -> np.ndarray:
        """First derivatives of the basis, shape ``(len(x), order + 1)``."""
        # l_j' is a degree p-1 polynomial, reproduced exactly by the nodal basis
        return self.eval(x) @ self._dmat


@dataclass(frozen=True)
class EvalMatrices:
    """``B1d[l, j] = phi_j(x_l)`` and ``G1d[l, j] = phi_j'(x_l)``."""

    B1d: np.ndarray
    G1d: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.B1d.shape


def eval_matrices(basis: Basis1D, rule: QuadratureRule1D | np.ndarray) -> EvalMatrices:
    points = rule.points if isinstance(rule, QuadratureRule1D) else np.asarray(rule)
    return EvalMatrices(B1d=basis.eval(points), G1d=basis.deriv(points))


class OpCounter:
    """Tally of floating-point multiplies done by the contraction kernels."""

    def __init__(self):
        self.multiplies = 0

    def add(self, n: int) -> None:
        self.multiplies += int(n)

    def reset(self) -> None:
        self.multiplies = 0


def _check(mat: np.ndarray, V: np.ndarray, name: str) -> None:
    if mat.ndim != 2:
        raise ValueError(f"{name} must be a 2D matrix, got shape {mat.shape}")
    if V.ndim < 2 or V.shape[-1] != mat.shape[1] or V.shape[-2] != mat.shape[1]:
        raise ValueError(
            f"element array trailing shape {V.shape[-2:]} does not match "
            f"{name} with {mat.shape[1]} columns"
        )


def _count(counter: OpCounter | None, V: np.ndarray, n: int) -> None:
    if counter is not None:
        batch = int(np.prod(V.shape[:-2], dtype=np.int64))
        counter.add(batch * n)


def contract_x(mat: np.ndarray, V: np.ndarray, counter: OpCounter | None = None) -> np.ndarray:
    """Apply ``mat`` along the last (x) axis: ``out[..., a, k] = sum_i mat[k, i] V[..., a, i]``."""
    _count(counter, V, V.shape[-2] * mat.shape[0] * mat.shape[1])
    return V @ mat.T


def contract_y(mat: np.ndarray, V: np.ndarray, counter: OpCounter | None = None) -> np.ndarray:
    """Apply ``mat`` along the y axis: ``out[..., k, b] = sum_i mat[k, i] V[..., i, b]``."""
    _count(counter, V, V.shape[-1] * mat.shape[0] * mat.shape[1])
    return mat @ V


def tensor_interp_2d(B1d: np.ndarray, V: np.ndarray, counter: OpCounter | None = None) -> np.ndarray:
    """Values at the quadrature lattice, ``B1d @ V @ B1d.T``, as two 1D sweeps.

    ``V`` may carry leading batch axes (one per element).
    """
    B1d = np.asarray(B1d)
    V = np.asarray(V)
    _check(B1d, V, "B1d")
    return contract_y(B1d, contract_x(B1d, V, counter), counter)


def tensor_grad_2d(
    B1d: np.ndarray, G1d: np.ndarray, V: np.ndarray, counter: OpCounter | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Reference derivatives (d/dx, d/dy) at the quadrature lattice."""
    B1d = np.asarray(B1d)
    G1d = np.asarray(G1d)
    V = np.asarray(V)
    _check(B1d, V, "B1d")
    _check(G1d, V, "G1d")
    bx = contract_x(B1d, V, counter)
    gx = contract_x(G1d, V, counter)
    return contract_y(B1d, gx, counter), contract_y(G1d, bx, counter)


def tensor_interp_2d_t(B1d: np.ndarray, Q: np.ndarray, counter: OpCounter | None = None) -> np.ndarray:
    """Transpose of :func:`tensor_interp_2d`: ``B1d.T @ Q @ B1d``."""
    B1d = np.asarray(B1d)
    return contract_y(B1d.T, contract_x(B1d.T, Q, counter), counter)


def tensor_grad_2d_t(
    B1d: np.ndarray,
    G1d: np.ndarray,
    Qx: np.ndarray,
    Qy: np.ndarray,
    counter: OpCounter | None = None,
) -> np.ndarray:
    """Transpose of :func:`tensor_grad_2d`, summing both derivative components."""
    Bt, Gt = np.asarray(B1d).T, np.asarray(G1d).T
    # y sweeps first, then one shared x sweep per 1D matrix
    a = contract_y(Bt, Qx, counter)
    b = contract_y(Gt, Qy, counter)
    return contract_x(Gt, a, counter) + contract_x(Bt, b, counter)


def dense_tensor_matrix(A: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Explicit 2D operator ``A (y) (x) C (x)`` acting on lexicographic (x fastest) vectors."""
    return np.kron(A, C)
