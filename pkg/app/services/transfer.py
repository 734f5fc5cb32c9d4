import numpy as np
import scipy.sparse as sp

from app.core.exceptions import NonNestedError, SpaceMismatchError
from app.core.logging import get_logger
from app.models.hierarchy import Agglomeration
from app.models.operators import TransferPair
from app.services.dgspace import DGSpace, default_order
from app.services.quadrature import element_rule

logger = get_logger(__name__)

NESTING_TOL = 1e-8


def prolongation_matrix(coarse: DGSpace, fine: DGSpace, agglomeration: Agglomeration) -> TransferPair:
    """
    I'm building the embedding V_coarse -> V_fine. The block of fine element k is
    (phi_fine_i, phi_coarse_j) over k, integrated with k's rule; R = P^T.
    """
    labels = agglomeration.fine_to_coarse
    if len(labels) != fine.mesh.n_elements or agglomeration.coarse_count != coarse.mesh.n_elements:
        raise NonNestedError("agglomeration map does not match the two meshes")
    if coarse.p > fine.p:
        raise NonNestedError(f"coarse degree {coarse.p} exceeds fine degree {fine.p}")

    order = default_order(fine.p)
    n_f, n_c = fine.n_loc, coarse.n_loc
    local_rows, local_cols = np.meshgrid(np.arange(n_f), np.arange(n_c), indexing="ij")
    rows, cols, data = [], [], []
    for k in range(fine.mesh.n_elements):
        parent = int(labels[k])
        rule = element_rule(fine.mesh.sub_tri[k], order)
        block = (fine.basis(k, rule.points) * rule.weights) @ coarse.basis(parent, rule.points).T
        rows.append(k * n_f + local_rows.ravel())
        cols.append(parent * n_c + local_cols.ravel())
        data.append(block.ravel())
    P = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(fine.dim, coarse.dim),
    ).tocsr()

    # an exact embedding is an isometry between orthonormal bases
    norms = np.sqrt(np.asarray(P.multiply(P).sum(axis=0)).ravel())
    worst = float(np.abs(norms - 1.0).max())
    if worst > NESTING_TOL:
        raise NonNestedError(f"coarse space is not contained in the fine space (column norm defect {worst:.2e})")
    return TransferPair(prolongation=P, restriction=P.T.tocsr())


def p_embedding(low: DGSpace, high: DGSpace) -> TransferPair:
    """
    I'm embedding a lower degree space into a higher one on the same mesh.
    """
    if low.mesh is not high.mesh and (
        low.mesh.n_elements != high.mesh.n_elements or not np.array_equal(low.mesh.vertices, high.mesh.vertices)
    ):
        raise SpaceMismatchError("p-embedding needs both spaces on the same mesh")
    n = low.mesh.n_elements
    identity = Agglomeration(fine_to_coarse=np.arange(n), coarse_count=n)
    return prolongation_matrix(low, high, identity)
