"""
Two-level and W-cycle multigrid with Richardson smoothing.

Levels are stored coarse to fine. Every level except the coarsest holds the
transfer to the level below it; the coarsest one is solved directly.
"""
import time
from typing import List, Optional

import numpy as np
import scipy.sparse as sp

from app.core.config import AMG_MAX_COARSE, C_SIGMA, DIVERGENCE_FACTOR, LAMBDA_SAFETY
from app.core.exceptions import HierarchyError
from app.core.logging import get_logger
from app.models.hierarchy import MeshHierarchy
from app.models.operators import LevelData, TransferPair
from app.schemas.schemas import CycleType, MultigridConfig, PenaltyParams, SolveReport
from app.services.assembly import assemble_sipg
from app.services.dgspace import build_space
from app.services.hierarchy import aggregate_algebraic_mis
from app.services.solvers import DirectSolver, as_csr, estimate_lambda, make_report, smooth
from app.services.transfer import prolongation_matrix

logger = get_logger(__name__)


def build_levels(
    hierarchy: MeshHierarchy,
    C_sigma: float = C_SIGMA,
    lambda_safety: float = LAMBDA_SAFETY,
) -> List[LevelData]:
    """
    I'm assembling A_j, Lambda_j and the transfer of every level, coarsest first,
    with a direct factorization on the coarsest level.
    """
    spaces = [build_space(mesh, p) for mesh, p in zip(hierarchy.levels, hierarchy.p_per_level)]
    levels = []
    for index, space in enumerate(spaces):
        A = assemble_sipg(space, PenaltyParams(C_sigma=C_sigma, p=space.p)).matrix
        level = LevelData(A=A, lam=estimate_lambda(A, safety=lambda_safety), space=space)
        if index == 0:
            level.coarse_solver = DirectSolver(A)
        else:
            level.transfer = prolongation_matrix(spaces[index - 1], space, hierarchy.maps[index - 1])
        levels.append(level)
    logger.info("multigrid levels: dimensions %s", [level.n for level in levels])
    return levels


def _coarse_solver(level: LevelData) -> DirectSolver:
    if level.coarse_solver is None:
        level.coarse_solver = DirectSolver(level.A)
    return level.coarse_solver


def w_cycle(levels: List[LevelData], j: int, z: np.ndarray, rhs: np.ndarray, m1: int, m2: int) -> np.ndarray:
    """
    One W-cycle on level j (index into `levels`, j >= 1).
    On j = 1 the correction is the exact coarse solve, which is the two-level cycle.
    """
    level = levels[j]
    z = smooth(level, z, rhs, m1)
    residual = level.transfer.restriction @ (rhs - level.A @ z)
    if j == 1:
        correction = _coarse_solver(levels[0]).solve(residual)
    else:
        correction = w_cycle(levels, j - 1, np.zeros_like(residual), residual, m1, m2)
        correction = w_cycle(levels, j - 1, correction, residual, m1, m2)
    z = z + level.transfer.prolongation @ correction
    return smooth(level, z, rhs, m2)


def _active_levels(levels: List[LevelData], config: MultigridConfig) -> List[LevelData]:
    count = 2 if config.cycle == CycleType.TWO_LEVEL else config.levels
    if count > len(levels):
        raise HierarchyError(f"{count} levels requested but only {len(levels)} are available")
    return levels[-count:]


def multigrid_solve(
    levels: List[LevelData],
    rhs: np.ndarray,
    config: MultigridConfig,
    z0: Optional[np.ndarray] = None,
) -> tuple:
    """
    I'm iterating the configured cycle until |r| / |r0| <= tol_rel, max_iter
    cycles, or a residual growth beyond the divergence factor.
    Returns the iterate and its SolveReport.
    """
    started = time.perf_counter()
    active = _active_levels(levels, config)
    fine = active[-1]
    z = np.zeros(fine.n) if z0 is None else np.array(z0, dtype=float)
    r0 = float(np.linalg.norm(rhs - fine.A @ z))
    history = [r0]
    echo = config.model_dump(mode="json")
    if r0 == 0:
        return z, make_report(history, True, started, config=echo)

    converged = diverged = False
    for it in range(config.max_iter):
        z = w_cycle(active, len(active) - 1, z, rhs, config.m1, config.m2)
        res = float(np.linalg.norm(rhs - fine.A @ z))
        history.append(res)
        logger.debug("cycle %d: relative residual %.3e", it + 1, res / r0)
        if res <= config.tol_rel * r0:
            converged = True
            break
        if not np.isfinite(res) or res > DIVERGENCE_FACTOR * r0:
            diverged = True
            logger.warning("multigrid diverged after %d cycles", it + 1)
            break
    report = make_report(history, converged, started, diverged=diverged, config=echo)
    if not converged and not diverged:
        logger.warning("multigrid did not converge in %d cycles (rho %.4f)", config.max_iter, report.rho)
    return z, report


def two_level_solve(levels, rhs, config: MultigridConfig, z0=None):
    """
    I'm running the two-level method on the finest two levels.
    """
    return multigrid_solve(levels, rhs, config.model_copy(update={"cycle": CycleType.TWO_LEVEL, "levels": 2}), z0)


def w_cycle_solve(levels, rhs, config: MultigridConfig, z0=None):
    """
    I'm running the W-cycle over the configured number of levels.
    """
    return multigrid_solve(levels, rhs, config.model_copy(update={"cycle": CycleType.W_CYCLE}), z0)


def error_propagation(levels: List[LevelData], e: np.ndarray, config: MultigridConfig) -> np.ndarray:
    """
    I'm applying one cycle to A e = 0 started from e.
    """
    active = _active_levels(levels, config)
    zero = np.zeros_like(e)
    return w_cycle(active, len(active) - 1, np.array(e, dtype=float), zero, config.m1, config.m2)


def aggregation_prolongation(labels: np.ndarray, coarse_count: int) -> sp.csr_matrix:
    """Tentative (unsmoothed) prolongation: indicator of each aggregate"""
    n = len(labels)
    return sp.csr_matrix((np.ones(n), (np.arange(n), labels)), shape=(n, coarse_count))


def build_algebraic_levels(
    A,
    lambda_safety: float = LAMBDA_SAFETY,
    max_coarse: int = AMG_MAX_COARSE,
) -> List[LevelData]:
    """
    I'm building an unsmoothed aggregation hierarchy with Galerkin coarse operators.
    Coarsening stops at `max_coarse` unknowns or when MIS no longer reduces.
    """
    current = as_csr(A)
    fine_first = []
    while current.shape[0] > max_coarse:
        agglomeration = aggregate_algebraic_mis(current)
        if agglomeration.coarse_count >= current.shape[0]:
            break
        P = aggregation_prolongation(agglomeration.fine_to_coarse, agglomeration.coarse_count)
        R = P.T.tocsr()
        fine_first.append(
            LevelData(A=current, lam=estimate_lambda(current, safety=lambda_safety),
                      transfer=TransferPair(prolongation=P, restriction=R))
        )
        current = (R @ current @ P).tocsr()
    fine_first.append(
        LevelData(A=current, lam=estimate_lambda(current, safety=lambda_safety), coarse_solver=DirectSolver(current))
    )
    levels = fine_first[::-1]
    logger.info("algebraic hierarchy: dimensions %s", [level.n for level in levels])
    return levels
