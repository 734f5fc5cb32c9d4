from typing import Callable, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from app.core.exceptions import SpaceMismatchError
from app.core.logging import get_logger
from app.models.mesh import Face, PolyMesh
from app.models.operators import SparseOperator
from app.schemas.schemas import PenaltyParams
from app.services.dgspace import DGSpace, ScalarField, default_order, error_order, project
from app.services.quadrature import element_rule, face_rule

logger = get_logger(__name__)

VectorField = Callable[[np.ndarray, np.ndarray], np.ndarray]
Block = Tuple[int, int, np.ndarray]


def penalty_sigma(face: Face, params: PenaltyParams, mesh: PolyMesh) -> float:
    """
    I'm computing C_sigma p^2 max(1/h+, 1/h-); boundary faces use their single owner.
    """
    inverse_h = 1.0 / mesh.elements[face.element_plus].diameter
    if face.element_minus is not None:
        inverse_h = max(inverse_h, 1.0 / mesh.elements[face.element_minus].diameter)
    return params.C_sigma * params.p ** 2 * inverse_h


def _params_for(space: DGSpace, params: Optional[PenaltyParams]) -> PenaltyParams:
    if params is None:
        return PenaltyParams(p=space.p)
    if params.p != space.p:
        raise SpaceMismatchError(f"penalty degree {params.p} does not match space degree {space.p}")
    return params


def _volume_blocks(space: DGSpace, order: int) -> List[Block]:
    blocks = []
    for k in range(space.mesh.n_elements):
        rule = element_rule(space.mesh.sub_tri[k], order)
        grads = space.basis_gradients(k, rule.points)
        stiffness = np.einsum("iqd,jqd,q->ij", grads, grads, rule.weights)
        blocks.append((k, k, 0.5 * (stiffness + stiffness.T)))
    return blocks


def _face_blocks(space: DGSpace, params: PenaltyParams, order: int, consistency: bool) -> List[Block]:
    """
    Face terms of the interior penalty form. Sides carry the sign s = +1
    (plus) or -1 (minus) so that [v].n = s v and {grad u}.n = w D u with
    w = 1/2 inside and 1 on the boundary.
    """
    mesh = space.mesh
    blocks = []
    for index, face in enumerate(mesh.faces):
        rule = face_rule(mesh.face_coordinates(index), order)
        sigma = penalty_sigma(face, params, mesh)
        sides = [(face.element_plus, 1.0)]
        if face.element_minus is not None:
            sides.append((face.element_minus, -1.0))
        average = 0.5 if len(sides) == 2 else 1.0
        traces = []
        for k, sign in sides:
            values = space.basis(k, rule.points)
            normal_derivs = space.basis_gradients(k, rule.points) @ face.normal
            traces.append((k, sign, values * rule.weights, values, normal_derivs))

        def block(a, b) -> np.ndarray:
            _, s_a, weighted_a, _, d_a = traces[a]
            _, s_b, weighted_b, v_b, d_b = traces[b]
            out = sigma * s_a * s_b * (weighted_a @ v_b.T)
            if consistency:
                out -= average * s_a * (weighted_a @ d_b.T)
                out -= average * s_b * ((d_a * rule.weights) @ v_b.T)
            return out

        for a in range(len(sides)):
            diagonal = block(a, a)
            blocks.append((traces[a][0], traces[a][0], 0.5 * (diagonal + diagonal.T)))
        if len(sides) == 2:
            coupling = block(0, 1)
            blocks.append((traces[0][0], traces[1][0], coupling))
            blocks.append((traces[1][0], traces[0][0], coupling.T))
    return blocks


def _to_csr(space: DGSpace, blocks: List[Block]) -> sp.csr_matrix:
    n_loc = space.n_loc
    local_rows, local_cols = np.meshgrid(np.arange(n_loc), np.arange(n_loc), indexing="ij")
    rows = np.concatenate([k * n_loc + local_rows.ravel() for k, _, _ in blocks])
    cols = np.concatenate([l * n_loc + local_cols.ravel() for _, l, _ in blocks])
    data = np.concatenate([b.ravel() for _, _, b in blocks])
    matrix = sp.coo_matrix((data, (rows, cols)), shape=(space.dim, space.dim)).tocsr()
    matrix.sum_duplicates()
    return matrix


def assemble_sipg(space: DGSpace, params: Optional[PenaltyParams] = None) -> SparseOperator:
    """
    I'm assembling the symmetric interior penalty operator in the orthonormal basis.
    """
    params = _params_for(space, params)
    order = default_order(space.p)
    blocks = _volume_blocks(space, order) + _face_blocks(space, params, order, consistency=True)
    matrix = _to_csr(space, blocks)
    logger.debug("assembled SIPG operator: n=%d nnz=%d", matrix.shape[0], matrix.nnz)
    return SparseOperator(matrix=matrix, symmetric=True)


def dg_norm_gram(space: DGSpace, params: Optional[PenaltyParams] = None) -> SparseOperator:
    """
    I'm assembling the Gram matrix of the DG norm: broken H1 seminorm plus
    penalty-weighted jumps.
    """
    params = _params_for(space, params)
    order = default_order(space.p)
    blocks = _volume_blocks(space, order) + _face_blocks(space, params, order, consistency=False)
    return SparseOperator(matrix=_to_csr(space, blocks), symmetric=True)


def assemble_load(space: DGSpace, f: ScalarField, order: Optional[int] = None) -> np.ndarray:
    """
    I'm building b_i = (f, phi_i); the order defaults to 2p + 2.
    """
    return project(space, f, order or default_order(space.p))


def dg_error(
    space: DGSpace,
    u: np.ndarray,
    exact_gradient: VectorField,
    params: Optional[PenaltyParams] = None,
    order: Optional[int] = None,
) -> float:
    """
    I'm measuring the DG norm of u_exact - u_h for an exact solution that is
    continuous and vanishes on the boundary, so only the jumps of u_h enter the
    face terms. `exact_gradient(x, y)` returns an (q, 2) array.
    """
    params = _params_for(space, params)
    order = order or error_order(space.p)
    mesh = space.mesh
    total = 0.0
    for k in range(mesh.n_elements):
        rule = element_rule(mesh.sub_tri[k], order)
        exact = np.asarray(exact_gradient(rule.points[:, 0], rule.points[:, 1]), dtype=float)
        diff = exact - space.evaluate_gradient(u, k, rule.points)
        total += float(rule.weights @ (diff ** 2).sum(axis=1))
    for index, face in enumerate(mesh.faces):
        rule = face_rule(mesh.face_coordinates(index), order)
        jump = space.evaluate(u, face.element_plus, rule.points)
        if face.element_minus is not None:
            jump = jump - space.evaluate(u, face.element_minus, rule.points)
        total += penalty_sigma(face, params, mesh) * float(rule.weights @ jump ** 2)
    return float(np.sqrt(total))
