from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Points (n, 2) or (n,) and strictly positive weights"""
    points: np.ndarray
    weights: np.ndarray

    @property
    def measure(self) -> float:
        return float(self.weights.sum())


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """
    Compressed-sparse-row matrix plus a symmetry flag.
    Houses the SIPG operator A_j and the DG-norm Gram matrix.
    """
    matrix: sp.csr_matrix
    symmetric: bool = True

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def __matmul__(self, other):
        return self.matrix @ other

    def asymmetry(self) -> float:
        """max|A - A^T| relative to max|A|"""
        scale = abs(self.matrix).max()
        if scale == 0:
            return 0.0
        return abs(self.matrix - self.matrix.T).max() / scale


@dataclass(frozen=True, eq=False)
class TransferPair:
    """Prolongation (fine x coarse) and its L2-adjoint restriction R = P^T"""
    prolongation: sp.csr_matrix
    restriction: sp.csr_matrix


@dataclass(eq=False)
class LevelData:
    """
    Everything one multigrid level needs during a cycle.
    `transfer` links this level to the next coarser one and is None on the
    coarsest level, which instead carries the direct `coarse_solver`.
    `space` is the DG space behind A; algebraic levels have none.
    """
    A: sp.csr_matrix
    lam: float
    transfer: Optional[TransferPair] = None
    coarse_solver: Optional[object] = None
    space: Optional[object] = None

    @property
    def n(self) -> int:
        return self.A.shape[0]
