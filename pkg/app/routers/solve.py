import argparse
from pathlib import Path

from pydantic import ValidationError

from app.core.config import C_SIGMA, MAX_ITER, RNG_SEED, TARGET_FACTOR, TOL_REL
from app.core.exceptions import ConvergenceError, UsageError
from app.core.logging import get_logger
from app.core.storage import write_matrix_market, write_rows
from app.models.hierarchy import MeshHierarchy
from app.schemas.schemas import PenaltyParams, RunConfig, SolverKind
from app.services.analysis import amg_failure_demo, forcing
from app.services.assembly import assemble_load, assemble_sipg
from app.services.dgspace import build_space
from app.services.hierarchy import build_hierarchy, load_hierarchy
from app.services.mesh import load_mesh
from app.services.multigrid import build_levels, multigrid_solve
from app.services.solvers import cg_solve, pcg_block_jacobi

logger = get_logger(__name__)

REPORT_COLUMNS = [
    "solver", "p", "m1", "m2", "levels", "iterations", "rho", "converged",
    "final_residual",
]


def register(subparsers) -> None:
    """I'm adding the `solve` subcommand: one solve of the manufactured Poisson problem"""
    parser = subparsers.add_parser("solve", help="solve -laplace(u) = f with a chosen solver")
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--hierarchy", help="hierarchy directory")
    source.add_argument("-i", "--input", help="fine mesh JSON file")
    parser.add_argument("-J", type=int, default=None, help="levels to agglomerate when reading a mesh")
    parser.add_argument("--solver", required=True, choices=[kind.value for kind in SolverKind])
    parser.add_argument("--p", type=int, default=None)
    parser.add_argument("--m", type=int, default=None, help="pre- and post-smoothing steps")
    parser.add_argument("--m1", type=int, default=3)
    parser.add_argument("--m2", type=int, default=3)
    parser.add_argument("--levels", type=int, default=None, help="W-cycle levels (finest ones)")
    parser.add_argument("--c-sigma", type=float, default=C_SIGMA)
    parser.add_argument("--factor", type=float, default=TARGET_FACTOR)
    parser.add_argument("--tol", type=float, default=TOL_REL)
    parser.add_argument("--max-iter", type=int, default=MAX_ITER)
    parser.add_argument("--seed", type=int, default=RNG_SEED)
    parser.add_argument("--report", help="CSV file for the solve report")
    parser.add_argument("--history", help="CSV file for the residual history")
    parser.add_argument("--dump-matrix", help="Matrix Market file for the fine operator")
    parser.set_defaults(handler=run)


def _run_config(args: argparse.Namespace) -> RunConfig:
    """
    I'm validating the solve flags into a RunConfig.
    """
    m1 = args.m if args.m is not None else args.m1
    m2 = args.m if args.m is not None else args.m2
    try:
        return RunConfig(
            solver=args.solver, p=args.p or 1, m1=m1, m2=m2, levels=args.levels,
            C_sigma=args.c_sigma, tol=args.tol, max_iter=args.max_iter, seed=args.seed,
        )
    except ValidationError as exc:
        raise UsageError(f"invalid solve options: {exc.errors()[0]['msg']}") from exc


def _hierarchy(args: argparse.Namespace, config: RunConfig, needed: int) -> MeshHierarchy:
    """I'm loading the stored hierarchy or agglomerating the input mesh"""
    if args.hierarchy:
        hierarchy = load_hierarchy(args.hierarchy)
        if args.p is not None:
            hierarchy = MeshHierarchy(hierarchy.levels, hierarchy.maps, [config.p] * hierarchy.n_levels)
        return hierarchy
    levels = args.J or needed
    return build_hierarchy(load_mesh(args.input), levels, config.p, args.factor, config.seed)


def run(args: argparse.Namespace) -> int:
    """
    I'm running one solve and writing the optional report, history and matrix files.
    The report carries no timings so repeated runs write identical bytes.
    """
    config = _run_config(args)
    kind = config.solver

    if kind in (SolverKind.TL, SolverKind.WCYCLE):
        hierarchy = _hierarchy(args, config, config.levels or 2)
        n_levels = 2 if kind == SolverKind.TL else (config.levels or hierarchy.n_levels)
        if n_levels < hierarchy.n_levels:
            # Only the finest n_levels take part in the cycle
            hierarchy = hierarchy.subset(n_levels)
        levels = build_levels(hierarchy, config.C_sigma)
        fine = levels[-1]
        rhs = assemble_load(fine.space, forcing)
        _, report = multigrid_solve(levels, rhs, config.multigrid(n_levels))
        A = fine.A
    else:
        if args.hierarchy:
            mesh = load_hierarchy(args.hierarchy).fine
        else:
            mesh = load_mesh(args.input)
        n_levels = 1
        if kind == SolverKind.AMG_MIS:
            report, n_levels = amg_failure_demo(mesh, config.p, config.m1, config.C_sigma, config.tol, config.max_iter)
            A = None
        else:
            space = build_space(mesh, config.p)
            A = assemble_sipg(space, PenaltyParams(C_sigma=config.C_sigma, p=config.p))
            rhs = assemble_load(space, forcing)
            if kind == SolverKind.CG:
                _, report = cg_solve(A, rhs, config.tol, config.max_iter)
            else:
                _, report = pcg_block_jacobi(A, rhs, space.n_loc, config.tol, config.max_iter)

    logger.info("%s finished in %.3f s", kind.value, report.wall_time)
    print(f"solver={kind.value} iterations={report.iterations} rho={report.rho:.4f} converged={report.converged}")
    if args.report:
        write_rows(Path(args.report), [{
            "solver": kind.value, "p": config.p, "m1": config.m1, "m2": config.m2, "levels": n_levels,
            "iterations": report.iterations, "rho": report.rho, "converged": report.converged,
            "final_residual": report.final_residual,
        }], REPORT_COLUMNS)
    if args.history:
        write_rows(
            Path(args.history),
            [{"iteration": i, "residual": r} for i, r in enumerate(report.residual_history)],
            ["iteration", "residual"],
        )
    if args.dump_matrix:
        if A is None:
            raise UsageError("--dump-matrix is not available for the algebraic solver")
        matrix = getattr(A, "matrix", A)
        write_matrix_market(Path(args.dump_matrix), matrix, symmetric=getattr(A, "symmetric", True))

    if not report.converged:
        raise ConvergenceError(f"{kind.value} stopped after {report.iterations} iterations without converging")
    return 0
