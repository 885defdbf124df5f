"""Poisson solves with convergence studies and an exact-error AMR loop."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .basis import gauss_legendre
from .fespace import (
    GridFunction,
    H1,
    build_space,
    compute_l2_error,
    element_l2_errors,
    essential_dofs,
    local_to_true,
    project_coefficient,
)
from .forms import (
    BilinearForm,
    DiffusionIntegrator,
    assemble_linear_form,
    form_linear_system,
    recover_fem_solution,
)
from .linalg import CGResult, cg_solve
from .mesh import Mesh, load_native, make_cartesian, print_vtk
from .ncmesh import NcForest, Split

Field = Callable[[np.ndarray, np.ndarray], np.ndarray]


class ConfigError(ValueError):
    """Invalid run configuration."""


@dataclass(frozen=True)
class ManufacturedSolution:
    """Exact solution ``u`` of ``-lap u = f`` with its gradient."""

    name: str
    u: Field
    f: Field
    grad: Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]


def sine_solution() -> ManufacturedSolution:
    pi = np.pi

    def u(x, y):
        return np.sin(pi * x) * np.sin(pi * y)

    def f(x, y):
        return 2 * pi**2 * np.sin(pi * x) * np.sin(pi * y)

    def grad(x, y):
        return pi * np.cos(pi * x) * np.sin(pi * y), pi * np.sin(pi * x) * np.cos(pi * y)

    return ManufacturedSolution("sine", u, f, grad)


def front_solution(steepness: float = 60.0, radius: float = 0.7) -> ManufacturedSolution:
    """Circular arctangent front ``atan(steepness (r - radius))`` around the origin."""

    def u(x, y):
        return np.arctan(steepness * (np.hypot(x, y) - radius))

    def _parts(x, y):
        r = np.hypot(x, y)
        s = steepness * (r - radius)
        d1 = steepness / (1 + s * s)
        d2 = -2 * steepness**2 * s / (1 + s * s) ** 2
        return r, d1, d2

    def f(x, y):
        r, d1, d2 = _parts(x, y)
        return -(d2 + d1 / r)

    def grad(x, y):
        r, d1, _ = _parts(x, y)
        return d1 * x / r, d1 * y / r

    return ManufacturedSolution("front", u, f, grad)


def polynomial_solution(degree: int) -> ManufacturedSolution:
    """``1 + x^p + y^p / 2 + x y / 4``; lies in the Q_p space on affine meshes."""
    p = int(degree)

    def u(x, y):
        return 1 + x**p + 0.5 * y**p + 0.25 * x * y

    def f(x, y):
        return -(p * (p - 1) * (x ** max(p - 2, 0) + 0.5 * y ** max(p - 2, 0)))

    def grad(x, y):
        return p * x ** (p - 1) + 0.25 * y, 0.5 * p * y ** (p - 1) + 0.25 * x

    return ManufacturedSolution(f"poly{p}", u, f, grad)


SOLUTIONS = {"sine": sine_solution, "front": front_solution}


def get_solution(name: str) -> ManufacturedSolution:
    try:
        return SOLUTIONS[name]()
    except KeyError:
        raise ConfigError(f"unknown solution {name!r}; choose from {sorted(SOLUTIONS)}") from None


@dataclass(frozen=True)
class RunConfig:
    mesh_path: str | None = None
    cartesian: int = 8
    order: int = 1
    assembly: str = "full"
    prec: str = "none"
    tol: float = 1e-12
    max_iters: int = 2000
    amr_iters: int = 0
    theta: float = 0.9
    max_irregularity: int | None = None
    aniso: bool = False
    solution: str = "sine"
    vtk: str | None = None
    table: str | None = None
    threads: int = 1
    convergence: int = 0
    timing: bool = False

    def __post_init__(self):
        if self.order < 1:
            raise ConfigError(f"order must be >= 1, got {self.order}")
        if self.mesh_path is None and self.cartesian < 1:
            raise ConfigError(f"cartesian size must be >= 1, got {self.cartesian}")
        if not 0.0 < self.theta <= 1.0:
            raise ConfigError(f"theta must lie in (0, 1], got {self.theta}")
        if not self.tol > 0.0:
            raise ConfigError(f"tol must be positive, got {self.tol}")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if self.assembly not in ("full", "partial"):
            raise ConfigError(f"assembly must be full or partial, got {self.assembly!r}")
        if self.prec not in ("none", "jacobi"):
            raise ConfigError(f"prec must be none or jacobi, got {self.prec!r}")
        if self.amr_iters < 0 or self.convergence < 0:
            raise ConfigError("amr_iters and convergence must be >= 0")
        if self.max_irregularity is not None and self.max_irregularity < 1:
            raise ConfigError("max_irregularity must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.solution not in SOLUTIONS:
            raise ConfigError(f"unknown solution {self.solution!r}")


@dataclass
class ConvergenceRow:
    n_true_dofs: int
    h: float
    l2_error: float
    order: float | None = None
    cg_iterations: int = 0
    solve_seconds: float | None = None
    stored_reals: int = 0
    converged: bool = True


@dataclass
class SolveResult:
    solution: GridFunction
    row: ConvergenceRow
    cg: CGResult


@dataclass
class StudyResult:
    rows: list[ConvergenceRow]
    solution: GridFunction | None = None
    forest: NcForest | None = None
    extra: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return all(r.converged for r in self.rows)


def initial_mesh(config: RunConfig) -> Mesh:
    if config.mesh_path is not None:
        with open(config.mesh_path, encoding="utf-8") as fh:
            return load_native(fh.read())
    return make_cartesian(config.cartesian, config.cartesian)


def max_diameter(mesh: Mesh) -> float:
    """Largest vertex-to-vertex distance over all elements."""
    v = mesh.vertices[mesh.elements]
    d = [np.linalg.norm(v[:, a] - v[:, b], axis=1) for a in range(4) for b in range(a + 1, 4)]
    return float(np.max(d))


def solve_poisson(
    config: RunConfig,
    source: Mesh | NcForest | None = None,
    exact: ManufacturedSolution | None = None,
) -> SolveResult:
    """Solve ``-lap u = f`` with Dirichlet data from the exact solution on every boundary."""
    exact = exact or get_solution(config.solution)
    source = initial_mesh(config) if source is None else source
    space = build_space(source, H1(config.order))
    form = BilinearForm(space, config.assembly, threads=config.threads)
    form.add_domain_integrator(DiffusionIntegrator(1.0)).assemble()
    rhs = assemble_linear_form(space, exact.f)
    ess = essential_dofs(space)
    bc = local_to_true(space, project_coefficient(space, exact.u).values)
    A, X0, B = form_linear_system(form, rhs, ess, bc)
    precond = A.diagonal() if config.prec == "jacobi" else None
    start = time.perf_counter()
    cg = cg_solve(A, B, tol=config.tol, max_iters=config.max_iters, precond=precond)
    elapsed = time.perf_counter() - start
    gf = recover_fem_solution(space, cg.x)
    row = ConvergenceRow(
        n_true_dofs=space.n_true_dofs,
        h=max_diameter(space.mesh),
        l2_error=compute_l2_error(gf, exact.u),
        cg_iterations=cg.iterations,
        solve_seconds=elapsed if config.timing else None,
        stored_reals=form.stored_reals,
        converged=cg.converged,
    )
    return SolveResult(gf, row, cg)


def _rate_h(prev: ConvergenceRow, row: ConvergenceRow) -> float | None:
    if prev.h == row.h or prev.l2_error <= 0 or row.l2_error <= 0:
        return None
    return math.log(prev.l2_error / row.l2_error) / math.log(prev.h / row.h)


def _rate_dofs(prev: ConvergenceRow, row: ConvergenceRow) -> float | None:
    # in 2D the DOF count plays the role of h^-2
    if prev.n_true_dofs == row.n_true_dofs or prev.l2_error <= 0 or row.l2_error <= 0:
        return None
    return 2.0 * math.log(prev.l2_error / row.l2_error) / math.log(row.n_true_dofs / prev.n_true_dofs)


def convergence_study(config: RunConfig, levels: int | None = None, exact=None) -> StudyResult:
    """Uniform refinement: ``levels`` solves, halving h each time."""
    levels = config.convergence if levels is None else levels
    if levels < 1:
        raise ConfigError("a convergence study needs at least one level")
    rows: list[ConvergenceRow] = []
    result = None
    forest = None if config.mesh_path is None else NcForest(initial_mesh(config))
    for level in range(levels):
        if forest is None:
            n = config.cartesian * 2**level
            source = make_cartesian(n, n)
        else:
            if level:
                forest.refine(range(forest.n_leaves))
            source = forest
        result = solve_poisson(config, source, exact)
        if rows:
            result.row.order = _rate_h(rows[-1], result.row)
        rows.append(result.row)
    return StudyResult(rows, result.solution, forest)


def _directional_indicators(gf: GridFunction, exact: ManufacturedSolution):
    """Per-element integrals of the squared reference derivatives of the error."""
    space = gf.space
    rule = gauss_legendre(space.order + 3)
    X, J = space.mesh.map_lattice(rule.points, jacobian=True)
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    dxh, dyh = gf.reference_gradient_lattice(rule.points)
    ux, uy = exact.grad(X[..., 0], X[..., 1])
    ex = dxh - (J[..., 0, 0] * ux + J[..., 1, 0] * uy)
    ey = dyh - (J[..., 0, 1] * ux + J[..., 1, 1] * uy)
    w = np.outer(rule.weights, rule.weights)
    return np.einsum("ab,eab->e", w, det * ex**2), np.einsum("ab,eab->e", w, det * ey**2)


def mark_elements(errors: np.ndarray, theta: float) -> np.ndarray:
    """Ids of elements whose error reaches ``theta`` times the largest one."""
    errors = np.asarray(errors, dtype=float)
    if errors.size == 0 or errors.max() <= 0.0:
        return np.zeros(0, dtype=np.int64)
    return np.flatnonzero(errors >= theta * errors.max())


def choose_splits(ind_x: np.ndarray, ind_y: np.ndarray) -> list[Split]:
    """X when the x-indicator is at least twice the y one, Y for the converse, else ISO."""
    out = []
    for a, b in zip(ind_x.tolist(), ind_y.tolist()):
        if a >= 2.0 * b and a > 0.0:
            out.append(Split.X)
        elif b >= 2.0 * a and b > 0.0:
            out.append(Split.Y)
        else:
            out.append(Split.ISO)
    return out


def amr_loop(
    config: RunConfig,
    exact: ManufacturedSolution | None = None,
    target_error: float | None = None,
    max_iters: int | None = None,
) -> StudyResult:
    """Solve, estimate exact element errors, refine the worst ones, repeat.

    Runs ``config.amr_iters`` refinements (or ``max_iters``), stopping early
    once the global error drops to ``target_error``.
    """
    exact = exact or get_solution(config.solution)
    iters = config.amr_iters if max_iters is None else max_iters
    forest = NcForest(initial_mesh(config), config.max_irregularity)
    rows: list[ConvergenceRow] = []
    result = None
    for it in range(iters + 1):
        result = solve_poisson(config, forest, exact)
        if rows:
            result.row.order = _rate_dofs(rows[-1], result.row)
        rows.append(result.row)
        if it == iters or (target_error is not None and result.row.l2_error <= target_error):
            break
        errors = element_l2_errors(result.solution, exact.u)
        marked = mark_elements(errors, config.theta)
        if config.aniso:
            ix, iy = _directional_indicators(result.solution, exact)
            splits = choose_splits(ix[marked], iy[marked])
        else:
            splits = [Split.ISO] * len(marked)
        forest.refine(list(zip(marked.tolist(), splits)))
    return StudyResult(rows, result.solution, forest)


COLUMNS = ("dofs", "h", "l2_error", "order", "cg_its", "stored")
WIDTHS = (10, 10, 10, 7, 7, 10)


def report(rows: list[ConvergenceRow], timing: bool = False) -> str:
    """Fixed-width table of the rows; the timing column is only shown on request."""
    cols = list(COLUMNS)
    widths = list(WIDTHS)
    if timing:
        cols.insert(5, "solve_s")
        widths.insert(5, 9)
    lines = [" ".join(c.rjust(w) for c, w in zip(cols, widths))]
    for r in rows:
        cells = [
            str(r.n_true_dofs),
            f"{r.h:.3e}",
            f"{r.l2_error:.2e}",
            "-" if r.order is None else f"{r.order:.2f}",
            str(r.cg_iterations) + ("" if r.converged else "!"),
            str(r.stored_reals),
        ]
        if timing:
            cells.insert(5, "-" if r.solve_seconds is None else f"{r.solve_seconds:.3f}")
        lines.append(" ".join(c.rjust(w) for c, w in zip(cells, widths)))
    return "\n".join(lines) + "\n"


def write_vtk(path: str, gf: GridFunction, exact: ManufacturedSolution | None = None) -> None:
    fields = {"u_h": gf}
    if exact is not None:
        fields["u_exact"] = project_coefficient(gf.space, exact.u, conforming=False)
    text = print_vtk(gf.space.mesh, fields, subdivisions=max(1, gf.space.order))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def run(config: RunConfig) -> tuple[StudyResult, str]:
    """Dispatch a configuration to a single solve, a convergence study or the AMR loop."""
    exact = get_solution(config.solution)
    if config.amr_iters > 0:
        study = amr_loop(config, exact)
    elif config.convergence > 0:
        study = convergence_study(config, exact=exact)
    else:
        res = solve_poisson(config, exact=exact)
        study = StudyResult([res.row], res.solution)
    return study, report(study.rows, timing=config.timing)


def with_overrides(config: RunConfig, **kw) -> RunConfig:
    return replace(config, **kw)
