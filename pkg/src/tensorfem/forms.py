"""Mass and diffusion operators in full or partial assembly, and the linear systems built from them."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from .basis import (
    OpCounter,
    default_quadrature,
    dense_tensor_matrix,
    tensor_grad_2d,
    tensor_grad_2d_t,
    tensor_interp_2d,
    tensor_interp_2d_t,
)
from .fespace import FeSpace, GridFunction, MapType, true_to_local
from .linalg import LinearOperator, SparseMatrix, sparse_triple_product
from .mesh import InvertedElementError
from .topology import local_lex_positions

Coefficient = float | Callable[[np.ndarray, np.ndarray], np.ndarray]


class Assembly(str, Enum):
    FULL = "full"
    PARTIAL = "partial"


class PaMode(str, Enum):
    DIFFUSION = "diffusion"
    MASS = "mass"


@dataclass(frozen=True)
class DiffusionIntegrator:
    kappa: Coefficient = 1.0


@dataclass(frozen=True)
class MassIntegrator:
    rho: Coefficient = 1.0


# -- helpers ------------------------------------------------------------------


def _chunks(n: int, threads: int) -> list[slice]:
    threads = max(1, min(int(threads), max(n, 1)))
    edges = np.linspace(0, n, threads + 1).astype(int)
    return [slice(a, b) for a, b in zip(edges[:-1], edges[1:])]


def _map_chunks(fn, n: int, threads: int) -> list:
    """Evaluate ``fn(slice)`` over element chunks; results come back in chunk order."""
    chunks = _chunks(n, threads)
    if len(chunks) == 1:
        return [fn(chunks[0])]
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        return list(pool.map(fn, chunks))


def _coef(c: Coefficient, X: np.ndarray) -> np.ndarray:
    if callable(c):
        return np.broadcast_to(np.asarray(c(X[..., 0], X[..., 1]), dtype=float), X.shape[:-1])
    return np.full(X.shape[:-1], float(c))


def _geometry(space: FeSpace, points: np.ndarray):
    """Physical points, Jacobians and determinants; raises on inverted elements."""
    X, J = space.mesh.map_lattice(points, jacobian=True)
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    bad = det <= 0.0
    if np.any(bad):
        e = int(np.argwhere(bad)[0][0])
        raise InvertedElementError(e, float(det[e].min()))
    return X, J, det


def _quadrature(space: FeSpace):
    rule = default_quadrature(space.order)
    basis = space.basis
    return rule, basis.eval(rule.points), basis.deriv(rule.points)


def _lex_to_local(mats: np.ndarray, p: int) -> np.ndarray:
    pos = local_lex_positions(p)
    return mats[:, pos[:, None], pos[None, :]]


def _check_integral(space: FeSpace, what: str) -> None:
    if space.coll.map_type is MapType.INTEGRAL:
        raise NotImplementedError(f"{what} is not defined for INTEGRAL-mapped spaces")


# -- full assembly ------------------------------------------------------------


def _diffusion_lex(space: FeSpace, kappa: Coefficient) -> np.ndarray:
    _check_integral(space, "diffusion")
    rule, B, G = _quadrature(space)
    X, J, det = _geometry(space, rule.points)
    # reference gradients of every basis function at every point, (nq*nq, n*n)
    dxh = dense_tensor_matrix(B, G)
    dyh = dense_tensor_matrix(G, B)
    Jinv = np.linalg.inv(J).reshape(len(det), -1, 2, 2)
    w = (np.outer(rule.weights, rule.weights)[None] * det * _coef(kappa, X)).reshape(len(det), -1)
    # physical gradient component i: sum_j Jinv[j, i] * d/dxhat_j
    gx = Jinv[..., 0, 0, None] * dxh + Jinv[..., 1, 0, None] * dyh
    gy = Jinv[..., 0, 1, None] * dxh + Jinv[..., 1, 1, None] * dyh
    return np.einsum("eq,eqi,eqj->eij", w, gx, gx) + np.einsum("eq,eqi,eqj->eij", w, gy, gy)


def _mass_lex(space: FeSpace, rho: Coefficient) -> np.ndarray:
    rule, B, _ = _quadrature(space)
    X, _, det = _geometry(space, rule.points)
    phi = dense_tensor_matrix(B, B)
    w = np.outer(rule.weights, rule.weights)[None] * det * _coef(rho, X)
    if space.coll.map_type is MapType.INTEGRAL:
        w = w / det**2
    return np.einsum("eq,qi,qj->eij", w.reshape(len(det), -1), phi, phi)


def diffusion_element_matrices(space: FeSpace, kappa: Coefficient = 1.0) -> np.ndarray:
    """Local diffusion matrices ``(ne, ndof, ndof)`` in local DOF order."""
    return _lex_to_local(_diffusion_lex(space, kappa), space.order)


def mass_element_matrices(space: FeSpace, rho: Coefficient = 1.0) -> np.ndarray:
    """Local mass matrices ``(ne, ndof, ndof)`` in local DOF order."""
    return _lex_to_local(_mass_lex(space, rho), space.order)


def _scatter_matrices(space: FeSpace, mats: np.ndarray) -> SparseMatrix:
    t = space.lex_table
    rows = np.broadcast_to(t[:, :, None], mats.shape)
    cols = np.broadcast_to(t[:, None, :], mats.shape)
    return SparseMatrix.from_coo(rows, cols, mats, (space.n_dofs, space.n_dofs), kind="local")


def _to_true(space: FeSpace, A_local: SparseMatrix) -> SparseMatrix:
    if space.conforming:
        return A_local
    return sparse_triple_product(space.P, A_local, kind="system")


def assemble_local_matrix(space: FeSpace, integrators) -> SparseMatrix:
    """Sum of the integrators' element matrices scattered into an L-level matrix."""
    mats = 0.0
    for integ in integrators:
        if isinstance(integ, DiffusionIntegrator):
            mats = mats + _diffusion_lex(space, integ.kappa)
        elif isinstance(integ, MassIntegrator):
            mats = mats + _mass_lex(space, integ.rho)
        else:
            raise TypeError(f"unsupported integrator {integ!r}")
    return _scatter_matrices(space, np.asarray(mats))


def assemble_diffusion_full(space: FeSpace, kappa: Coefficient = 1.0) -> SparseMatrix:
    """Assembled ``P^T A P`` for ``(kappa grad u, grad v)``."""
    return _to_true(space, assemble_local_matrix(space, [DiffusionIntegrator(kappa)]))


def assemble_mass_full(space: FeSpace, rho: Coefficient = 1.0) -> SparseMatrix:
    """Assembled ``P^T M P`` for ``(rho u, v)``."""
    return _to_true(space, assemble_local_matrix(space, [MassIntegrator(rho)]))


# -- partial assembly ---------------------------------------------------------


@dataclass
class PaData:
    """Quadrature-point data of one integrator: ``D`` is ``(ne, nq, nq)`` for
    mass and ``(ne, 3, nq, nq)`` (``D00, D01, D11``) for diffusion."""

    mode: PaMode
    B1d: np.ndarray
    G1d: np.ndarray
    D: np.ndarray

    @property
    def stored_reals(self) -> int:
        return int(self.D.size)

    @property
    def n_elements(self) -> int:
        return self.D.shape[0]


def pa_setup(space: FeSpace, mode, coefficient: Coefficient = 1.0) -> PaData:
    mode = PaMode(mode)
    rule, B, G = _quadrature(space)
    X, J, det = _geometry(space, rule.points)
    w = np.outer(rule.weights, rule.weights)[None]
    coef = _coef(coefficient, X)
    if mode is PaMode.MASS:
        D = w * det * coef
        if space.coll.map_type is MapType.INTEGRAL:
            D = D / det**2
        return PaData(mode, B, G, D)
    _check_integral(space, "diffusion")
    J11, J12 = J[..., 0, 0], J[..., 0, 1]
    J21, J22 = J[..., 1, 0], J[..., 1, 1]
    c = w * coef / det
    D = np.stack(
        [c * (J12 * J12 + J22 * J22), -c * (J12 * J11 + J22 * J21), c * (J11 * J11 + J21 * J21)],
        axis=1,
    )
    return PaData(mode, B, G, D)


def pa_element_apply(pa: PaData, V: np.ndarray, D: np.ndarray, counter: OpCounter | None = None):
    """``B^T D B`` on element arrays ``V`` (leading axes batch); ``D`` broadcasts against them."""
    if pa.mode is PaMode.MASS:
        Q = tensor_interp_2d(pa.B1d, V, counter) * D
        if counter is not None:
            counter.add(Q.size)
        return tensor_interp_2d_t(pa.B1d, Q, counter)
    gx, gy = tensor_grad_2d(pa.B1d, pa.G1d, V, counter)
    D00, D01, D11 = D[..., 0, :, :], D[..., 1, :, :], D[..., 2, :, :]
    qx = D00 * gx + D01 * gy
    qy = D01 * gx + D11 * gy
    if counter is not None:
        counter.add(4 * gx.size)
    return tensor_grad_2d_t(pa.B1d, pa.G1d, qx, qy, counter)


def _pa_local_apply(pas, space: FeSpace, x_local: np.ndarray, threads: int = 1) -> np.ndarray:
    n = space.order + 1
    table = space.lex_table

    def work(sl: slice) -> np.ndarray:
        V = x_local[table[sl]].reshape(-1, n, n)
        Y = 0.0
        for pa in pas:
            Y = Y + pa_element_apply(pa, V, pa.D[sl])
        return np.bincount(table[sl].ravel(), weights=np.ravel(Y), minlength=space.n_dofs)

    parts = _map_chunks(work, space.n_elements, threads)
    y = parts[0]
    for part in parts[1:]:
        y = y + part
    return y


def pa_apply(pa, space: FeSpace, x, threads: int = 1) -> np.ndarray:
    """``y = P^T G^T B^T D B G P x`` for a T-vector ``x`` without forming a matrix.

    ``pa`` may be a single :class:`PaData` or a list whose actions are summed.
    """
    pas = [pa] if isinstance(pa, PaData) else list(pa)
    x_local = true_to_local(space, x)
    y = _pa_local_apply(pas, space, x_local, threads)
    if space.conforming:
        return y
    return space.P.T @ y


def _pa_diag_lex(pa: PaData) -> np.ndarray:
    B2, G2, BG = pa.B1d**2, pa.G1d**2, pa.B1d * pa.G1d
    if pa.mode is PaMode.MASS:
        return np.einsum("qi,pj,eqp->eij", B2, B2, pa.D)
    D00, D01, D11 = pa.D[:, 0], pa.D[:, 1], pa.D[:, 2]
    return (
        np.einsum("qi,pj,eqp->eij", B2, G2, D00)
        + 2.0 * np.einsum("qi,pj,eqp->eij", BG, BG, D01)
        + np.einsum("qi,pj,eqp->eij", G2, B2, D11)
    )


def pa_diagonal(pa, space: FeSpace) -> np.ndarray:
    """Exact diagonal of the partially assembled operator at the T level."""
    pas = [pa] if isinstance(pa, PaData) else list(pa)
    n = space.order + 1
    table = space.lex_table
    ne = space.n_elements
    elem_diag = sum(_pa_diag_lex(p_) for p_ in pas).reshape(ne, -1)
    if space.conforming:
        return np.bincount(table.ravel(), weights=elem_diag.ravel(), minlength=space.n_dofs)
    is_slave = np.zeros(space.n_dofs, dtype=bool)
    is_slave[list(space.constraints)] = True
    coupled = is_slave[table].any(axis=1)
    plain = ~coupled
    tidx = space.true_index[table[plain]]
    diag = np.bincount(tidx.ravel(), weights=elem_diag[plain].ravel(), minlength=space.n_true_dofs)
    P = space.P
    for e in np.flatnonzero(coupled):
        dofs = table[e]
        cols_rows = [P.row(int(d)) for d in dofs]
        touched = np.unique(np.concatenate([c for c, _ in cols_rows]))
        pos = {int(t): k for k, t in enumerate(touched)}
        C = np.zeros((len(dofs), len(touched)))
        for a, (c, v) in enumerate(cols_rows):
            C[a, [pos[int(t)] for t in c]] = v
        # columns of C as a batch of element arrays
        V = C.T.reshape(-1, n, n)
        AC = sum(pa_element_apply(p_, V, p_.D[e]) for p_ in pas).reshape(len(touched), -1)
        diag[touched] += np.einsum("ta,at->t", AC, C)
    return diag


def pa_stored_reals(space: FeSpace, mode) -> int:
    """Reals kept by partial assembly: ``n_el * nq^2 * (3 | 1)``."""
    nq = space.order + 2
    return space.n_elements * nq * nq * (3 if PaMode(mode) is PaMode.DIFFUSION else 1)


def full_local_reals(space: FeSpace) -> int:
    """Reals held by the element matrices of full assembly: ``n_el * (p+1)^4``."""
    return space.n_elements * (space.order + 1) ** 4


def pa_element_multiplies(order: int, mode=PaMode.DIFFUSION) -> int:
    """Multiplies for one sum-factorized element application at order ``order``."""
    n, nq = order + 1, order + 2
    rng = np.random.default_rng(0)
    from .basis import Basis1D

    basis = Basis1D(order)
    pts = default_quadrature(order).points
    mode = PaMode(mode)
    D = rng.random((3, nq, nq)) if mode is PaMode.DIFFUSION else rng.random((nq, nq))
    pa = PaData(mode, basis.eval(pts), basis.deriv(pts), D[None])
    counter = OpCounter()
    pa_element_apply(pa, rng.random((n, n)), D, counter)
    return counter.multiplies


def dense_element_multiplies(order: int) -> int:
    """Multiplies for a dense local matrix-vector product."""
    return (order + 1) ** 4


# -- linear forms -------------------------------------------------------------


def assemble_linear_form(space: FeSpace, f: Coefficient) -> "LinearForm":
    """``b_i = sum_q w_q det J f(x_q) phi_i(xhat_q)`` accumulated into an L-vector."""
    rule, B, _ = _quadrature(space)
    X, _, det = _geometry(space, rule.points)
    Q = np.outer(rule.weights, rule.weights)[None] * det * _coef(f, X)
    if space.coll.map_type is MapType.INTEGRAL:
        Q = Q / det
    Y = tensor_interp_2d_t(B, Q)
    b = np.bincount(space.lex_table.ravel(), weights=Y.ravel(), minlength=space.n_dofs)
    return LinearForm(space, b)


@dataclass
class LinearForm:
    space: FeSpace
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.space.n_dofs,):
            raise ValueError(f"linear form needs {self.space.n_dofs} entries, got {self.values.shape}")

    def true_values(self) -> np.ndarray:
        if self.space.conforming:
            return self.values.copy()
        return self.space.P.T @ self.values


# -- bilinear forms -----------------------------------------------------------


class BilinearForm:
    """Sum of domain integrators on one space, in full or partial assembly."""

    def __init__(self, space: FeSpace, assembly=Assembly.FULL, threads: int = 1):
        self.space = space
        self.assembly = Assembly(assembly)
        self.threads = int(threads)
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        self.integrators: list = []
        self.matrix: SparseMatrix | None = None
        self.pa: list[PaData] | None = None

    def add_domain_integrator(self, integ) -> "BilinearForm":
        if not isinstance(integ, (DiffusionIntegrator, MassIntegrator)):
            raise TypeError(f"unsupported integrator {integ!r}")
        self.integrators.append(integ)
        return self

    def assemble(self) -> "BilinearForm":
        if self.assembly is Assembly.FULL:
            self.matrix = _to_true(self.space, assemble_local_matrix(self.space, self.integrators))
        else:
            self.pa = []
            for integ in self.integrators:
                if isinstance(integ, DiffusionIntegrator):
                    self.pa.append(pa_setup(self.space, PaMode.DIFFUSION, integ.kappa))
                else:
                    self.pa.append(pa_setup(self.space, PaMode.MASS, integ.rho))
        return self

    def _ready(self) -> None:
        if self.matrix is None and self.pa is None:
            self.assemble()

    @property
    def shape(self) -> tuple[int, int]:
        n = self.space.n_true_dofs
        return (n, n)

    def mult(self, x) -> np.ndarray:
        self._ready()
        x = np.asarray(x, dtype=float)
        if x.shape != (self.space.n_true_dofs,):
            raise ValueError(f"T-vector must have length {self.space.n_true_dofs}, got {x.shape}")
        if self.matrix is not None:
            return self.matrix @ x
        return pa_apply(self.pa, self.space, x, self.threads)

    def diagonal(self) -> np.ndarray:
        self._ready()
        if self.matrix is not None:
            return self.matrix.diagonal()
        return pa_diagonal(self.pa, self.space)

    @property
    def operator(self) -> LinearOperator:
        return LinearOperator(self.shape, self.mult)

    @property
    def stored_reals(self) -> int:
        self._ready()
        if self.matrix is not None:
            return self.matrix.nnz
        return sum(p.stored_reals for p in self.pa)


class ConstrainedOperator(LinearOperator):
    """Symmetric elimination applied around an operator action.

    Essential entries of the input are zeroed before the action and the
    corresponding output entries are replaced by the input values.
    """

    def __init__(self, form: BilinearForm, ess: np.ndarray):
        super().__init__(form.shape)
        self.form = form
        self.ess = ess

    def matvec(self, x: np.ndarray) -> np.ndarray:
        z = x.copy()
        z[self.ess] = 0.0
        y = self.form.mult(z)
        y[self.ess] = x[self.ess]
        return y

    def diagonal(self) -> np.ndarray:
        d = self.form.diagonal()
        d[self.ess] = 1.0
        return d


def form_linear_system(a: BilinearForm, b: LinearForm, ess, values=None):
    """Return ``(A, X0, B)`` for ``P^T A P X = P^T b`` with eliminated essential DOFs."""
    space = a.space
    nt = space.n_true_dofs
    ess = np.asarray(ess, dtype=np.int64).ravel()
    if ess.size and (ess.min() < 0 or ess.max() >= nt):
        raise ValueError(f"essential DOF id outside [0, {nt})")
    if ess.size and np.any(np.diff(ess) <= 0):
        raise ValueError("essential DOF list must be sorted and unique")
    values = np.zeros(nt) if values is None else np.asarray(values, dtype=float)
    if values.shape != (nt,):
        raise ValueError(f"boundary values must be a T-vector of length {nt}")
    a._ready()
    X0 = np.zeros(nt)
    X0[ess] = values[ess]
    B = b.true_values()
    if ess.size:
        B -= a.mult(X0)
        B[ess] = values[ess]
    if a.matrix is not None:
        A = a.matrix.eliminate(ess) if ess.size else a.matrix
    else:
        A = ConstrainedOperator(a, ess)
    return A, X0, B


def recover_fem_solution(space: FeSpace, X) -> GridFunction:
    return GridFunction(space, true_to_local(space, X))
