"""High-order quadrilateral finite elements: sum-factorized partial assembly and
non-conforming adaptive refinement for 2D Poisson problems."""

from .basis import Basis1D, NodeKind, default_quadrature, gauss_legendre, gauss_lobatto
from .fespace import (
    H1,
    L2,
    FeCollection,
    FeSpace,
    GridFunction,
    build_space,
    compute_l2_error,
    essential_dofs,
    project_coefficient,
)
from .forms import (
    BilinearForm,
    DiffusionIntegrator,
    LinearForm,
    MassIntegrator,
    assemble_diffusion_full,
    assemble_linear_form,
    assemble_mass_full,
    form_linear_system,
    pa_apply,
    pa_diagonal,
    pa_setup,
    recover_fem_solution,
)
from .linalg import CGResult, LinearOperator, SparseMatrix, cg_solve, sparse_triple_product
from .mesh import Mesh, curve_mesh, load_native, make_cartesian, print_vtk, save_native
from .ncmesh import Curve, NcForest, Split

__all__ = [
    "Basis1D", "NodeKind", "default_quadrature", "gauss_legendre", "gauss_lobatto",
    "H1", "L2", "FeCollection", "FeSpace", "GridFunction", "build_space", "compute_l2_error",
    "essential_dofs", "project_coefficient",
    "BilinearForm", "DiffusionIntegrator", "LinearForm", "MassIntegrator",
    "assemble_diffusion_full", "assemble_linear_form", "assemble_mass_full", "form_linear_system",
    "pa_apply", "pa_diagonal", "pa_setup", "recover_fem_solution",
    "CGResult", "LinearOperator", "SparseMatrix", "cg_solve", "sparse_triple_product",
    "Mesh", "curve_mesh", "load_native", "make_cartesian", "print_vtk", "save_native",
    "Curve", "NcForest", "Split",
]
