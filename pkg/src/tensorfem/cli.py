"""Command-line Poisson driver."""

from __future__ import annotations

import argparse
import sys

from .driver import ConfigError, RunConfig, get_solution, run, write_vtk
from .linalg import CGBreakdownError
from .mesh import MeshError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NOT_CONVERGED = 3
EXIT_IO = 4


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tensorfem", description="High-order Poisson solver on quadrilateral meshes.")
    src = ap.add_mutually_exclusive_group()
    src.add_argument("--mesh", metavar="PATH", help="mesh file in the native text format")
    src.add_argument("--cartesian", type=int, default=8, metavar="N", help="N x N unit-square mesh (default 8)")
    ap.add_argument("--order", type=int, default=1, help="polynomial order p (default 1)")
    ap.add_argument("--assembly", choices=["full", "partial"], default="full")
    ap.add_argument("--prec", choices=["none", "jacobi"], default="none")
    ap.add_argument("--tol", type=float, default=1e-12, help="relative residual tolerance")
    ap.add_argument("--max-iters", type=int, default=2000)
    ap.add_argument("--amr-iters", type=int, default=0, help="number of refinement steps")
    ap.add_argument("--theta", type=float, default=0.9, help="marking fraction of the largest error")
    ap.add_argument("--max-irregularity", type=int, default=None, help="limit on hanging-node chain depth")
    ap.add_argument("--aniso", action="store_true", help="allow anisotropic splits")
    ap.add_argument("--solution", choices=["sine", "front"], default="sine")
    ap.add_argument("--vtk", metavar="PATH", help="write the final solution as legacy VTK")
    ap.add_argument("--table", metavar="PATH", help="write the report table")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--convergence", type=int, default=0, metavar="LEVELS", help="uniform refinement levels")
    ap.add_argument("--timing", action="store_true", help="add the solve-time column (not reproducible)")
    return ap


def config_from_args(args: argparse.Namespace) -> RunConfig:
    return RunConfig(
        mesh_path=args.mesh,
        cartesian=args.cartesian,
        order=args.order,
        assembly=args.assembly,
        prec=args.prec,
        tol=args.tol,
        max_iters=args.max_iters,
        amr_iters=args.amr_iters,
        theta=args.theta,
        max_irregularity=args.max_irregularity,
        aniso=args.aniso,
        solution=args.solution,
        vtk=args.vtk,
        table=args.table,
        threads=args.threads,
        convergence=args.convergence,
        timing=args.timing,
    )


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        config = config_from_args(args)
        study, table = run(config)
    except (ConfigError, MeshError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except CGBreakdownError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    sys.stdout.write(table)
    try:
        if config.table:
            with open(config.table, "w", encoding="utf-8") as fh:
                fh.write(table)
        if config.vtk:
            write_vtk(config.vtk, study.solution, get_solution(config.solution))
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    if not study.converged:
        print("error: CG did not converge", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
