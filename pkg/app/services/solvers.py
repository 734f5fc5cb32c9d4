"""
Smoother, direct and Krylov solvers on assembled operators.
"""
import math
import time
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from app.core.config import LAMBDA_SAFETY, MAX_ITER, POWER_MAX_ITER, POWER_TOL, TOL_REL
from app.core.exceptions import FactorizationError, SingularBlockError
from app.core.logging import get_logger
from app.models.operators import LevelData
from app.schemas.schemas import SolveReport

logger = get_logger(__name__)

POWER_SEED = 12345


def as_csr(A) -> sp.csr_matrix:
    """Accepts a SparseOperator, a sparse matrix or a dense array"""
    return sp.csr_matrix(getattr(A, "matrix", A))


def convergence_factor(history: List[float]) -> float:
    """rho = (|r_N| / |r_0|)^(1/N); 0 when no iteration was needed"""
    n = len(history) - 1
    if n == 0 or history[0] == 0 or history[-1] == 0:
        return 0.0
    return math.exp(math.log(history[-1] / history[0]) / n)


def make_report(
    history: List[float],
    converged: bool,
    started: float,
    diverged: bool = False,
    config: Optional[Dict[str, object]] = None,
) -> SolveReport:
    """
    I'm packing a residual history into a SolveReport.
    """
    return SolveReport(
        iterations=len(history) - 1,
        residual_history=[float(r) for r in history],
        rho=convergence_factor(history),
        converged=converged,
        diverged=diverged,
        wall_time=time.perf_counter() - started,
        config=config or {},
    )


def estimate_lambda(
    A,
    safety: float = LAMBDA_SAFETY,
    tol: float = POWER_TOL,
    max_iter: int = POWER_MAX_ITER,
    seed: int = POWER_SEED,
) -> float:
    """
    I'm running power iteration for the largest eigenvalue of a symmetric A.
    Stops when the Rayleigh quotient changes by less than tol (relative);
    returns safety times the last quotient.
    """
    A = as_csr(A)
    if A.nnz == 0 or abs(A).max() == 0:
        logger.warning("power iteration on a zero matrix")
        return 0.0
    x = np.random.default_rng(seed).standard_normal(A.shape[0])
    x /= np.linalg.norm(x)
    previous = None
    quotient = 0.0
    for it in range(max_iter):
        y = A @ x
        quotient = float(x @ y)
        size = np.linalg.norm(y)
        if size == 0:
            break
        x = y / size
        logger.debug("power iteration %d: rayleigh quotient %.10e", it, quotient)
        if previous is not None and abs(quotient - previous) <= tol * abs(quotient):
            break
        previous = quotient
    return safety * quotient


def smooth(level: LevelData, z: np.ndarray, rhs: np.ndarray, m: int) -> np.ndarray:
    """m Richardson sweeps z <- z + (rhs - A z) / Lambda"""
    for _ in range(m):
        z = z + (rhs - level.A @ z) / level.lam
    return z


class DirectSolver:
    """
    Sparse LU with symmetric (diagonal) pivoting, reused across solves.
    Non-positive pivots under a symmetric permutation mean A is not SPD.
    """

    def __init__(self, A):
        matrix = sp.csc_matrix(as_csr(A))
        try:
            self.lu = splu(
                matrix,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options=dict(SymmetricMode=True),
            )
        except RuntimeError as exc:
            raise FactorizationError(f"sparse factorization failed: {exc}") from exc
        if np.array_equal(self.lu.perm_r, self.lu.perm_c):
            pivots = self.lu.U.diagonal()
            if np.any(pivots <= 0):
                raise FactorizationError("matrix is not positive definite (non-positive pivot)")
        else:
            logger.debug("factorization used off-diagonal pivots; positivity not checked")
        self.n = matrix.shape[0]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return self.lu.solve(np.asarray(rhs, dtype=float))


def direct_solve(A, rhs: np.ndarray) -> np.ndarray:
    """
    I'm solving A z = rhs with a sparse factorization.
    """
    return DirectSolver(A).solve(rhs)


def _krylov(A, rhs, precondition, tol_rel, max_iter, label) -> Tuple[np.ndarray, SolveReport]:
    started = time.perf_counter()
    A = as_csr(A)
    x = np.zeros_like(rhs, dtype=float)
    r = np.array(rhs, dtype=float)
    r0 = float(np.linalg.norm(r))
    history = [r0]
    if r0 == 0:
        return x, make_report(history, True, started, config={"solver": label})
    z = precondition(r)
    d = z.copy()
    rz = float(r @ z)
    converged = False
    for k in range(max_iter):
        Ad = A @ d
        alpha = rz / float(d @ Ad)
        x = x + alpha * d
        r = r - alpha * Ad
        res = float(np.linalg.norm(r))
        history.append(res)
        logger.debug("%s iteration %d: residual %.3e", label, k + 1, res)
        if res <= tol_rel * r0:
            converged = True
            break
        z = precondition(r)
        rz_next = float(r @ z)
        d = z + (rz_next / rz) * d
        rz = rz_next
    report = make_report(history, converged, started, config={"solver": label, "tol_rel": tol_rel})
    if not converged:
        logger.warning("%s did not converge in %d iterations", label, max_iter)
    return x, report


def cg_solve(A, rhs: np.ndarray, tol_rel: float = TOL_REL, max_iter: int = MAX_ITER) -> Tuple[np.ndarray, SolveReport]:
    """
    I'm running unpreconditioned conjugate gradients from a zero guess.
    """
    return _krylov(A, rhs, lambda r: r, tol_rel, max_iter, "CG")


def block_jacobi(A, block_size: int) -> sp.csr_matrix:
    """Inverse of the block diagonal of A with square blocks of `block_size`"""
    A = as_csr(A)
    n = A.shape[0]
    if n % block_size:
        raise FactorizationError(f"dimension {n} is not a multiple of the block size {block_size}")
    inverses = []
    for k in range(n // block_size):
        s = slice(k * block_size, (k + 1) * block_size)
        block = A[s, s].toarray()
        try:
            factor = scipy.linalg.cho_factor(block, lower=True)
        except np.linalg.LinAlgError as exc:
            raise SingularBlockError(k, "diagonal block is not positive definite") from exc
        inverses.append(scipy.linalg.cho_solve(factor, np.eye(block_size)))
    return sp.block_diag(inverses, format="csr")


def pcg_block_jacobi(
    A, rhs: np.ndarray, block_size: int, tol_rel: float = TOL_REL, max_iter: int = MAX_ITER
) -> Tuple[np.ndarray, SolveReport]:
    """
    I'm running conjugate gradients preconditioned by the inverse element blocks.
    """
    M = block_jacobi(A, block_size)
    return _krylov(A, rhs, lambda r: M @ r, tol_rel, max_iter, "PCG")
