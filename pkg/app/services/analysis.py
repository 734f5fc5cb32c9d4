"""
Numerical studies: coercivity constants, energy-norm contraction of the
multigrid cycles, manufactured-solution convergence rates, spectral
scaling, iteration tables and the algebraic-multigrid comparison.

Every study returns a pandas DataFrame; the study router writes them as CSV.
"""
import re
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.linalg import eigh
from scipy.sparse.linalg import ArpackNoConvergence, eigsh
from scipy.stats import linregress

from app.core.config import C_SIGMA, LLOYD_ITERS, MAX_ITER, TOL_REL
from app.core.exceptions import ConvergenceError, DGError, UsageError
from app.core.logging import get_logger
from app.models.mesh import PolyMesh
from app.models.operators import LevelData
from app.schemas.schemas import (
    ContractionEstimate,
    CycleType,
    MultigridConfig,
    PenaltyParams,
    SolveReport,
    StudyConfig,
)
from app.services.assembly import assemble_load, assemble_sipg, dg_error, dg_norm_gram
from app.services.dgspace import DGSpace, build_space, l2_error, project
from app.services.hierarchy import build_hierarchy
from app.services.mesh import generate_structured_triangular, generate_voronoi_lloyd
from app.services.multigrid import (
    build_algebraic_levels,
    build_levels,
    error_propagation,
    multigrid_solve,
)
from app.services.solvers import DirectSolver, as_csr, cg_solve, direct_solve, estimate_lambda, pcg_block_jacobi

logger = get_logger(__name__)

ITERATION_COLUMNS = ["set", "p", "m", "solver", "levels", "iterations", "rho", "converged"]
KRYLOV_SOLVERS = ("CG", "PCG")
COERCIVITY_TOL = 1e-6
CONTRACTION_ITERS = 50
STABILITY_SAMPLES = 100
# generalized eigenproblems up to this size go through dense LAPACK
DENSE_EIG_LIMIT = 600
COERCIVITY_COLUMNS = [
    "set", "level", "elements", "p", "C_sigma", "C_coer", "C_coer_bound", "C_cont", "stab_ratio",
]


# Manufactured problem: -laplace(u) = f on the unit square, u = 0 on the boundary
def exact_solution(x, y):
    return np.sin(np.pi * x) * np.sin(np.pi * y)


def exact_gradient(x, y):
    return np.column_stack([
        np.pi * np.cos(np.pi * x) * np.sin(np.pi * y),
        np.pi * np.sin(np.pi * x) * np.cos(np.pi * y),
    ])


def forcing(x, y):
    return 2.0 * np.pi ** 2 * np.sin(np.pi * x) * np.sin(np.pi * y)


# Mesh sets
def parse_mesh_set(label: str) -> Tuple[str, int]:
    """
    I'm splitting a mesh set label such as 'voronoi:512', 'tri:16' or a bare cell count (Voronoi).
    """
    match = re.fullmatch(r"(?:(voronoi|tri):)?(\d+)", label.strip().lower())
    if match is None:
        raise UsageError(f"invalid mesh set '{label}'; expected voronoi:N, tri:n or N")
    kind, size = match.group(1) or "voronoi", int(match.group(2))
    return kind, size


def generate_set_mesh(label: str, seed: int, lloyd_iters: int = LLOYD_ITERS) -> PolyMesh:
    """
    I'm generating the mesh a set label stands for.
    """
    kind, size = parse_mesh_set(label)
    if kind == "tri":
        return generate_structured_triangular(size)
    return generate_voronoi_lloyd(size, lloyd_iters=lloyd_iters, rng_seed=seed)


def solver_levels(name: str) -> int:
    """
    I'm reading the level count off a table solver name: TL -> 2, W3 -> 3, CG/PCG -> 1.
    """
    if name in KRYLOV_SOLVERS:
        return 1
    if name == "TL":
        return 2
    match = re.fullmatch(r"W(\d+)", name)
    if match is None or int(match.group(1)) < 2:
        raise UsageError(f"unknown solver '{name}'; expected TL, W<J>, CG or PCG")
    return int(match.group(1))


# Coercivity and continuity
def coercivity_constant(A, G, tol: float = COERCIVITY_TOL, max_iter: int = 1000, seed: int = 0) -> float:
    """
    I'm computing the smallest eigenvalue of A v = lambda G v by inverse iteration:
    solve A x = G v, G-normalize, until the Rayleigh quotient settles.
    """
    A, G = as_csr(A), as_csr(G)
    if A.shape != G.shape:
        raise UsageError("A and G must have the same dimension")
    solver = DirectSolver(A)
    v = np.random.default_rng(seed).standard_normal(A.shape[0])
    v /= np.sqrt(v @ (G @ v))
    previous = None
    value = 0.0
    for it in range(max_iter):
        x = solver.solve(G @ v)
        Gx = G @ x
        value = float((x @ (A @ x)) / (x @ Gx))
        v = x / np.sqrt(x @ Gx)
        if previous is not None and abs(value - previous) <= tol * abs(value):
            break
        previous = value
    else:
        logger.warning("inverse iteration did not settle in %d steps", max_iter)
    return value


def continuity_constant(A, G) -> float:
    """
    I'm computing the largest eigenvalue of A v = lambda G v, the continuity
    constant of the SIPG form in the DG norm.
    """
    A, G = as_csr(A), as_csr(G)
    if A.shape != G.shape:
        raise UsageError("A and G must have the same dimension")
    if A.shape[0] <= DENSE_EIG_LIMIT:
        return float(eigh(A.toarray(), G.toarray(), eigvals_only=True)[-1])
    try:
        values = eigsh(A, k=1, M=G, which="LA", tol=COERCIVITY_TOL, return_eigenvectors=False)
    except ArpackNoConvergence as exc:
        raise ConvergenceError(f"continuity eigenvalue did not converge: {exc}") from exc
    return float(values[0])


def coercivity_upper_bound(space: DGSpace, A, G) -> float:
    """
    I'm bounding C_coer from above by the Rayleigh-Ritz value of A v = lambda G v
    on span{Pi_p psi, Pi_0 psi} with psi = sin(pi x) sin(pi y).
    The pair spans the smooth mode and its cellwise sawtooth, the field that
    drives the SIPG form towards its coercivity limit on shape-regular meshes.
    """
    A, G = as_csr(A), as_csr(G)
    smooth = project(space, exact_solution)
    means = np.zeros_like(smooth)
    means[::space.n_loc] = smooth[::space.n_loc]
    V = np.column_stack([smooth, means])
    return float(eigh(V.T @ (A @ V), V.T @ (G @ V), eigvals_only=True)[0])


def transfer_stability(
    levels: List[LevelData], samples: int = STABILITY_SAMPLES, seed: int = 0
) -> List[Optional[float]]:
    """
    I'm measuring max |||P v|||_j / |||v|||_{j-1} over random coarse vectors for
    every level with a coarser neighbour; the coarsest level gets None.
    """
    rng = np.random.default_rng(seed)
    ratios: List[Optional[float]] = [None]
    for coarse, fine in zip(levels[:-1], levels[1:]):
        V = rng.standard_normal((coarse.n, samples))
        PV = fine.transfer.prolongation @ V
        fine_energy = np.einsum("ij,ij->j", PV, fine.A @ PV)
        coarse_energy = np.einsum("ij,ij->j", V, coarse.A @ V)
        ratios.append(float(np.sqrt(fine_energy / coarse_energy).max()))
    return ratios


def coercivity_study(config: StudyConfig) -> pd.DataFrame:
    """
    I'm recording, per mesh set, degree and level, the coercivity constant, its
    Ritz upper bound, the continuity constant and the transfer stability ratio.
    """
    rows = []
    for label in config.sets:
        mesh = generate_set_mesh(label, config.seed)
        for p in config.degrees:
            params = PenaltyParams(C_sigma=config.C_sigma, p=p)
            if config.coercivity_levels > 1:
                hierarchy = build_hierarchy(mesh, config.coercivity_levels, p, config.target_factor, config.seed)
                levels = build_levels(hierarchy, config.C_sigma)
                pairs = [(level.space, level.A) for level in levels]
                stability = transfer_stability(levels, seed=config.seed)
            else:
                space = build_space(mesh, p)
                pairs = [(space, assemble_sipg(space, params))]
                stability = [None]
            for index, (space, A) in enumerate(pairs):
                G = dg_norm_gram(space, params)
                value = coercivity_constant(A, G)
                bound = coercivity_upper_bound(space, A, G)
                continuity = continuity_constant(A, G)
                logger.info("coercivity %s level %d p=%d: %.4f (bound %.4f, continuity %.4f)",
                            label, index + 1, p, value, bound, continuity)
                rows.append({
                    "set": label, "level": index + 1, "elements": space.mesh.n_elements, "p": p,
                    "C_sigma": config.C_sigma, "C_coer": value, "C_coer_bound": bound,
                    "C_cont": continuity, "stab_ratio": stability[index],
                })
    return pd.DataFrame(rows, columns=COERCIVITY_COLUMNS)


# Contraction
def _energy(A, v: np.ndarray) -> float:
    return float(np.sqrt(max(v @ (A @ v), 0.0)))


def contraction_estimate(
    levels: List[LevelData],
    config: MultigridConfig,
    iterations: int = CONTRACTION_ITERS,
    seed: int = 0,
    mu: int = 0,
) -> ContractionEstimate:
    """
    I'm estimating the largest energy-norm ratio |||E e||| / |||e||| seen while
    power-iterating the error propagation operator E of one cycle.
    """
    fine = levels[-1]
    A = fine.A
    e = np.random.default_rng(seed).standard_normal(fine.n)
    e /= _energy(A, e)
    worst = 0.0
    for _ in range(iterations):
        propagated = error_propagation(levels, e, config)
        size = _energy(A, propagated)
        worst = max(worst, size)
        if size <= 1e-300:
            break
        e = propagated / size
    active = 2 if config.cycle == CycleType.TWO_LEVEL else config.levels
    p = fine.space.p if fine.space is not None else 0
    theta = fine.space.mesh.theta if fine.space is not None else 1.0
    indicator = theta ** 2 * p ** (2 + mu) / np.sqrt((1 + config.m1) * (1 + config.m2))
    return ContractionEstimate(levels=active, p=p, m=config.m1, contraction=worst,
                               sigma_indicator=float(indicator), mu=mu)


def contraction_study(config: StudyConfig) -> pd.DataFrame:
    """
    I'm estimating the cycle contraction per set, degree, smoothing count and
    depth, next to the worst transfer stability ratio of the active levels.
    """
    rows = []
    depth = max(config.levels)
    for label in config.sets:
        mesh = generate_set_mesh(label, config.seed)
        for p in config.degrees:
            hierarchy = build_hierarchy(mesh, depth, p, config.target_factor, config.seed)
            levels = build_levels(hierarchy, config.C_sigma)
            stability = transfer_stability(levels, seed=config.seed)
            for m in config.steps_for(p):
                for n_levels in config.levels:
                    cycle = CycleType.TWO_LEVEL if n_levels == 2 else CycleType.W_CYCLE
                    mg = MultigridConfig(m1=m, m2=m, levels=n_levels, cycle=cycle)
                    estimate = contraction_estimate(levels, mg, seed=config.seed)
                    logger.info("contraction %s p=%d m=%d J=%d: %.4f", label, p, m, n_levels, estimate.contraction)
                    rows.append({"set": label, **estimate.model_dump(),
                                 "stab_ratio": max(stability[len(levels) - n_levels + 1:])})
    return pd.DataFrame(rows)


# Convergence rates
def manufactured_convergence(
    degrees: Sequence[int], sizes: Sequence[int], C_sigma: float = C_SIGMA
) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    I'm measuring errors on structured triangular meshes and their least-squares
    slopes in log h.
    """
    rows = []
    for p in degrees:
        for n in sizes:
            mesh = generate_structured_triangular(n)
            space = build_space(mesh, p)
            params = PenaltyParams(C_sigma=C_sigma, p=p)
            u = direct_solve(assemble_sipg(space, params), assemble_load(space, forcing))
            rows.append({
                "p": p, "n": n, "h": mesh.h,
                "l2_error": l2_error(space, u, exact_solution),
                "dg_error": dg_error(space, u, exact_gradient, params),
            })
    errors = pd.DataFrame(rows)
    slopes = []
    for p, group in errors.groupby("p", sort=False):
        log_h = np.log(group["h"].to_numpy())
        slopes.append({
            "p": int(p),
            "dg_slope": linregress(log_h, np.log(group["dg_error"].to_numpy())).slope,
            "l2_slope": linregress(log_h, np.log(group["l2_error"].to_numpy())).slope,
        })
    return errors, pd.DataFrame(slopes)


# Spectral scaling
def eig_scaling_study(degrees: Sequence[int], sizes: Sequence[int], C_sigma: float = C_SIGMA) -> pd.DataFrame:
    """
    I'm tracking lambda_max(A) under h-halving (h_ratio) and degree increments (p_ratio).
    """
    values: Dict[Tuple[int, int], float] = {}
    rows = []
    for p in degrees:
        for n in sizes:
            mesh = generate_structured_triangular(n)
            A = assemble_sipg(build_space(mesh, p), PenaltyParams(C_sigma=C_sigma, p=p))
            values[p, n] = estimate_lambda(A, safety=1.0, tol=1e-8, max_iter=2000)
            rows.append({"p": p, "n": n, "h": mesh.h, "lambda_max": values[p, n]})
    ordered_sizes, ordered_degrees = list(sizes), list(degrees)
    for row in rows:
        i, k = ordered_sizes.index(row["n"]), ordered_degrees.index(row["p"])
        row["h_ratio"] = values[row["p"], row["n"]] / values[row["p"], ordered_sizes[i - 1]] if i else None
        row["p_ratio"] = values[row["p"], row["n"]] / values[ordered_degrees[k - 1], row["n"]] if k else None
    return pd.DataFrame(rows)


# Iteration tables
def _row(label: str, p: int, m: int, solver: str, n_levels: int, report: Optional[SolveReport]) -> dict:
    if report is None:
        return {"set": label, "p": p, "m": m, "solver": solver, "levels": n_levels,
                "iterations": 0, "rho": float("nan"), "converged": False}
    return {"set": label, "p": p, "m": m, "solver": solver, "levels": n_levels,
            "iterations": report.iterations, "rho": report.rho, "converged": report.converged}


def _failed_cell(label: str, p: int, steps: Sequence[int], solvers: Sequence[str]) -> List[dict]:
    multigrid = [s for s in solvers if s not in KRYLOV_SOLVERS]
    rows = [_row(label, p, m, s, solver_levels(s), None) for m in steps for s in multigrid]
    return rows + [_row(label, p, 0, s, 1, None) for s in solvers if s in KRYLOV_SOLVERS]


def iteration_cell(label: str, p: int, steps: Sequence[int], payload: dict) -> List[dict]:
    """
    I'm producing all rows of one (mesh set, degree) pair.
    Any failure, down to mesh generation, becomes non-converged rows.
    """
    config = StudyConfig(**payload)
    rows = []
    try:
        mesh = generate_set_mesh(label, config.seed)
        space = build_space(mesh, p)
        A = assemble_sipg(space, PenaltyParams(C_sigma=config.C_sigma, p=p))
        rhs = assemble_load(space, forcing)
    except DGError as exc:
        logger.warning("%s p=%d: no discretization (%s)", label, p, exc.detail)
        return _failed_cell(label, p, steps, config.solvers)

    multigrid = [s for s in config.solvers if s not in KRYLOV_SOLVERS]
    if multigrid:
        depth = max(solver_levels(s) for s in multigrid)
        try:
            hierarchy = build_hierarchy(mesh, depth, p, config.target_factor, config.seed)
            levels = build_levels(hierarchy, config.C_sigma)
        except DGError as exc:
            logger.warning("%s p=%d: no hierarchy (%s)", label, p, exc.detail)
            levels = None
        for m in steps:
            for solver in multigrid:
                n_levels = solver_levels(solver)
                report = None
                if levels is not None:
                    cycle = CycleType.TWO_LEVEL if solver == "TL" else CycleType.W_CYCLE
                    mg = MultigridConfig(m1=m, m2=m, levels=n_levels, cycle=cycle,
                                         tol_rel=config.tol_rel, max_iter=config.max_iter)
                    try:
                        _, report = multigrid_solve(levels, rhs, mg)
                    except DGError as exc:
                        logger.warning("%s p=%d m=%d %s failed: %s", label, p, m, solver, exc.detail)
                rows.append(_row(label, p, m, solver, n_levels, report))

    for solver in (s for s in config.solvers if s in KRYLOV_SOLVERS):
        report = None
        try:
            if solver == "CG":
                _, report = cg_solve(A, rhs, config.tol_rel, config.max_iter)
            else:
                _, report = pcg_block_jacobi(A, rhs, space.n_loc, config.tol_rel, config.max_iter)
        except DGError as exc:
            logger.warning("%s p=%d %s failed: %s", label, p, solver, exc.detail)
        rows.append(_row(label, p, 0, solver, 1, report))
    return rows


def iteration_table(config: StudyConfig) -> pd.DataFrame:
    """
    I'm running every (set, p) cell, in parallel when n_jobs allows.
    One row per (set, p, m, solver); Krylov rows carry m = 0.
    """
    for solver in config.solvers:
        solver_levels(solver)
    for label in config.sets:
        parse_mesh_set(label)
    payload = config.model_dump()
    cells = Parallel(n_jobs=config.n_jobs)(
        delayed(iteration_cell)(label, p, config.steps_for(p), payload)
        for label in config.sets
        for p in config.degrees
    )
    return pd.DataFrame([row for cell in cells for row in cell], columns=ITERATION_COLUMNS)


def format_iteration_table(frame: pd.DataFrame) -> str:
    """
    I'm pivoting the table into the 'N (rho)' layout; non-converged cells show '-'.
    """
    if frame.empty:
        return ""
    cells = frame.assign(
        cell=[f"{int(n)} ({r:.2f})" if ok else "-"
              for n, r, ok in zip(frame["iterations"], frame["rho"], frame["converged"])]
    )
    solvers = list(dict.fromkeys(frame["solver"]))
    table = cells.pivot_table(index=["set", "p", "m"], columns="solver", values="cell", aggfunc="first", sort=False)
    return table.reindex(columns=solvers).fillna("").to_string()


# Algebraic multigrid comparison
def amg_failure_demo(
    mesh: PolyMesh,
    p: int,
    m: int = 5,
    C_sigma: float = C_SIGMA,
    tol_rel: float = TOL_REL,
    max_iter: int = MAX_ITER,
) -> Tuple[SolveReport, int]:
    """
    I'm running the unsmoothed MIS aggregation W-cycle on the SIPG system.
    Returns the report (rho from the last residual even without convergence)
    and the number of algebraic levels.
    """
    space = build_space(mesh, p)
    A = assemble_sipg(space, PenaltyParams(C_sigma=C_sigma, p=p))
    rhs = assemble_load(space, forcing)
    levels = build_algebraic_levels(A)
    if len(levels) < 2:
        raise UsageError("problem is too small for an algebraic hierarchy")
    config = MultigridConfig(m1=m, m2=m, levels=len(levels), cycle=CycleType.W_CYCLE,
                             tol_rel=tol_rel, max_iter=max_iter)
    _, report = multigrid_solve(levels, rhs, config)
    logger.info("AMG-MIS p=%d: %d levels, N=%d, rho=%.4f", p, len(levels), report.iterations, report.rho)
    return report, len(levels)


def amg_study(config: StudyConfig, m: int = 5) -> pd.DataFrame:
    """
    I'm putting AMG-MIS rows next to the geometric W-cycle on the same problem.
    A failing solver leaves a non-converged row.
    """
    for label in config.sets:
        parse_mesh_set(label)
    rows = []
    depth = max(config.levels)
    for label in config.sets:
        try:
            mesh = generate_set_mesh(label, config.seed)
        except DGError as exc:
            logger.warning("%s: no mesh (%s)", label, exc.detail)
            mesh = None
        for p in config.degrees:
            algebraic, n_levels = None, 0
            if mesh is not None:
                try:
                    algebraic, n_levels = amg_failure_demo(mesh, p, m, config.C_sigma, config.tol_rel, config.max_iter)
                except DGError as exc:
                    logger.warning("%s p=%d: AMG-MIS failed (%s)", label, p, exc.detail)
            rows.append(_row(label, p, m, "AMG-MIS", n_levels, algebraic))
            geometric = None
            if mesh is not None:
                try:
                    hierarchy = build_hierarchy(mesh, depth, p, config.target_factor, config.seed)
                    levels = build_levels(hierarchy, config.C_sigma)
                    mg = MultigridConfig(m1=m, m2=m, levels=depth, cycle=CycleType.W_CYCLE,
                                         tol_rel=config.tol_rel, max_iter=config.max_iter)
                    _, geometric = multigrid_solve(levels, assemble_load(levels[-1].space, forcing), mg)
                except DGError as exc:
                    logger.warning("%s p=%d: geometric comparison failed (%s)", label, p, exc.detail)
            rows.append(_row(label, p, m, f"W{depth}", depth, geometric))
    return pd.DataFrame(rows, columns=ITERATION_COLUMNS)
