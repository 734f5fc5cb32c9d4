"""
Orthonormal modal bases of total degree p built in the physical frame of
each polygon.

Generating set: monomials in the centroid-shifted, half-diameter-scaled
coordinates, ordered by total degree and then by descending x-power.
The orthonormalization coefficients are lower triangular, so the first
(q+1)(q+2)/2 basis functions of degree p span exactly P_q on the element.
"""
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, List, Optional, Tuple

import numpy as np
import scipy.linalg

from app.core.config import MAX_DEGREE
from app.core.exceptions import DegenerateElementError, SpaceMismatchError
from app.core.logging import get_logger
from app.models.mesh import PolyMesh
from app.models.operators import QuadratureRule
from app.services.quadrature import MAX_ORDER, element_rule

logger = get_logger(__name__)

MASS_COND_WARNING = 1e12
ScalarField = Callable[[np.ndarray, np.ndarray], np.ndarray]


def local_dimension(p: int) -> int:
    return (p + 1) * (p + 2) // 2


def monomial_exponents(p: int) -> np.ndarray:
    """(n_loc, 2) exponents (a, b): total degree ascending, a descending"""
    return np.array([(a, k - a) for k in range(p + 1) for a in range(k, -1, -1)], dtype=np.int64)


def default_order(p: int) -> int:
    return 2 * p + 2


def error_order(p: int) -> int:
    """Overintegration for error norms, capped at the highest tabulated rule"""
    return min(2 * p + 8, MAX_ORDER)


@dataclass(frozen=True, eq=False)
class DGSpace:
    """
    Discontinuous piecewise polynomials of total degree p on `mesh`.
    Basis function i of element k is sum_j coefficients[k][i, j] * m_j where
    m_j are the scaled monomials of the element.
    """
    mesh: PolyMesh
    p: int
    coefficients: List[np.ndarray]

    @property
    def n_loc(self) -> int:
        return local_dimension(self.p)

    @property
    def dim(self) -> int:
        return self.mesh.n_elements * self.n_loc

    @cached_property
    def exponents(self) -> np.ndarray:
        return monomial_exponents(self.p)

    def dofs(self, k: int) -> slice:
        return slice(k * self.n_loc, (k + 1) * self.n_loc)

    def _scaled(self, k: int, points: np.ndarray) -> Tuple[np.ndarray, float]:
        element = self.mesh.elements[k]
        half = element.diameter / 2.0
        return (np.asarray(points, dtype=float).reshape(-1, 2) - element.centroid) / half, half

    def monomials(self, k: int, points: np.ndarray) -> np.ndarray:
        scaled, _ = self._scaled(k, points)
        a, b = self.exponents[:, 0], self.exponents[:, 1]
        return scaled[None, :, 0] ** a[:, None] * scaled[None, :, 1] ** b[:, None]

    def monomial_gradients(self, k: int, points: np.ndarray) -> np.ndarray:
        """(n_loc, q, 2) physical gradients of the scaled monomials"""
        scaled, half = self._scaled(k, points)
        a, b = self.exponents[:, 0], self.exponents[:, 1]
        x, y = scaled[None, :, 0], scaled[None, :, 1]
        am1 = np.maximum(a - 1, 0)[:, None]
        bm1 = np.maximum(b - 1, 0)[:, None]
        dx = a[:, None] * x ** am1 * y ** b[:, None] / half
        dy = b[:, None] * x ** a[:, None] * y ** bm1 / half
        return np.stack([dx, dy], axis=-1)

    def basis(self, k: int, points: np.ndarray) -> np.ndarray:
        """(n_loc, q) basis values"""
        return self.coefficients[k] @ self.monomials(k, points)

    def basis_gradients(self, k: int, points: np.ndarray) -> np.ndarray:
        """(n_loc, q, 2) basis gradients"""
        return np.einsum("ij,jqd->iqd", self.coefficients[k], self.monomial_gradients(k, points))

    def evaluate(self, u: np.ndarray, k: int, points: np.ndarray) -> np.ndarray:
        """Values of the DG function with coefficients u on element k"""
        return u[self.dofs(k)] @ self.basis(k, points)

    def evaluate_gradient(self, u: np.ndarray, k: int, points: np.ndarray) -> np.ndarray:
        return np.einsum("i,iqd->qd", u[self.dofs(k)], self.basis_gradients(k, points))

    def locate(self, points: np.ndarray) -> np.ndarray:
        """Element containing each point (first match through the sub-triangles)"""
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        owner = np.full(len(points), -1, dtype=np.int64)
        for k, triangles in enumerate(self.mesh.sub_tri):
            pending = np.flatnonzero(owner < 0)
            if pending.size == 0:
                break
            a, b, c = triangles[:, 0], triangles[:, 1], triangles[:, 2]
            pts = points[pending][:, None, :]
            d1 = (b[..., 0] - a[..., 0]) * (pts[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (pts[..., 0] - a[..., 0])
            d2 = (c[..., 0] - b[..., 0]) * (pts[..., 1] - b[..., 1]) - (c[..., 1] - b[..., 1]) * (pts[..., 0] - b[..., 0])
            d3 = (a[..., 0] - c[..., 0]) * (pts[..., 1] - c[..., 1]) - (a[..., 1] - c[..., 1]) * (pts[..., 0] - c[..., 0])
            inside = ((d1 >= -1e-14) & (d2 >= -1e-14) & (d3 >= -1e-14)).any(axis=1)
            owner[pending[inside]] = k
        return owner

    def evaluate_at(self, u: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Point values anywhere in the square"""
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        owner = self.locate(points)
        if np.any(owner < 0):
            raise ValueError("point outside the mesh")
        values = np.empty(len(points))
        for k in np.unique(owner):
            mask = owner == k
            values[mask] = self.evaluate(u, int(k), points[mask])
        return values


def _orthonormalize(k: int, mass: np.ndarray) -> np.ndarray:
    """Two passes of Cholesky-based Gram-Schmidt: returns lower-triangular C with C M C^T = I"""
    cond = np.linalg.cond(mass)
    if cond > MASS_COND_WARNING:
        logger.warning("element %d: local mass matrix condition number %.2e", k, cond)
    transform = np.eye(len(mass))
    current = mass
    for _ in range(2):
        try:
            factor = scipy.linalg.cholesky(current, lower=True)
        except np.linalg.LinAlgError as exc:
            raise DegenerateElementError(k, "local mass matrix is not positive definite") from exc
        step = scipy.linalg.solve_triangular(factor, np.eye(len(mass)), lower=True)
        transform = step @ transform
        current = transform @ mass @ transform.T
    return np.tril(transform)


def build_space(mesh: PolyMesh, p: int) -> DGSpace:
    """
    I'm building an orthonormal basis on every element of the mesh.
    """
    if not 1 <= p <= MAX_DEGREE:
        raise SpaceMismatchError(f"degree must lie in [1, {MAX_DEGREE}], got {p}")
    shell = DGSpace(mesh=mesh, p=p, coefficients=[])
    order = default_order(p)
    coefficients = []
    for k in range(mesh.n_elements):
        rule = element_rule(mesh.sub_tri[k], order)
        values = shell.monomials(k, rule.points)
        mass = (values * rule.weights) @ values.T
        coefficients.append(_orthonormalize(k, mass))
    return DGSpace(mesh=mesh, p=p, coefficients=coefficients)


def mass_matrix(space: DGSpace, k: int, order: Optional[int] = None) -> np.ndarray:
    """
    I'm integrating the local mass matrix of element k in the orthonormal basis.
    """
    rule = element_rule(space.mesh.sub_tri[k], order or default_order(space.p))
    values = space.basis(k, rule.points)
    return (values * rule.weights) @ values.T


def _field(f: ScalarField, points: np.ndarray) -> np.ndarray:
    return np.broadcast_to(np.asarray(f(points[:, 0], points[:, 1]), dtype=float), (len(points),))


def project(space: DGSpace, f: ScalarField, order: Optional[int] = None) -> np.ndarray:
    """
    I'm taking the L2 projection; with an orthonormal basis the coefficients are
    the moments (f, phi_i).
    """
    order = order or default_order(space.p)
    u = np.zeros(space.dim)
    for k in range(space.mesh.n_elements):
        rule: QuadratureRule = element_rule(space.mesh.sub_tri[k], order)
        u[space.dofs(k)] = space.basis(k, rule.points) @ (rule.weights * _field(f, rule.points))
    return u


def l2_error(space: DGSpace, u: np.ndarray, exact: ScalarField, order: Optional[int] = None) -> float:
    """
    I'm measuring the L2 error against an exact field.
    """
    order = order or error_order(space.p)
    total = 0.0
    for k in range(space.mesh.n_elements):
        rule = element_rule(space.mesh.sub_tri[k], order)
        diff = space.evaluate(u, k, rule.points) - _field(exact, rule.points)
        total += float(rule.weights @ diff ** 2)
    return float(np.sqrt(total))


def l2_norm(space: DGSpace, u: np.ndarray) -> float:
    """
    I'm returning the L2 norm, which orthonormal bases make Euclidean.
    """
    if len(u) != space.dim:
        raise SpaceMismatchError(f"vector of length {len(u)} does not belong to a space of dimension {space.dim}")
    return float(np.linalg.norm(u))
