"""
Gauss rules on triangles and segments.

Triangles use the conical (collapsed) product of a Gauss-Jacobi rule with
weight (1 - t) and a Gauss-Legendre rule, which is exact for every bivariate
polynomial of total degree <= 2n - 1 with n points per direction and keeps all
weights positive. Element rules are the concatenation of the mapped rules of
the element's sub-triangles.
"""
from functools import lru_cache
import math
from typing import Tuple

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from app.core.exceptions import DGError
from app.models.operators import QuadratureRule

MAX_ORDER = 20


def points_for_order(order: int) -> int:
    """Gauss points per direction exact up to `order`"""
    return max(1, math.ceil((order + 1) / 2))


def _check_order(order: int) -> None:
    if order < 1:
        raise DGError(f"quadrature order must be >= 1, got {order}")
    if order > MAX_ORDER:
        raise DGError(f"quadrature order {order} not supported (max {MAX_ORDER})")


@lru_cache(maxsize=None)
def reference_triangle_rule(order: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Rule on the triangle (0,0)-(1,0)-(0,1); weights sum to 1/2.
    Returned arrays are read-only since they are cached.
    """
    _check_order(order)
    n = points_for_order(order)
    t_jac, w_jac = roots_jacobi(n, 1.0, 0.0)
    t_leg, w_leg = roots_legendre(n)
    x = (t_jac + 1.0) / 2.0
    s = (t_leg + 1.0) / 2.0
    xi = np.repeat(x, n)
    eta = np.outer(1.0 - x, s).reshape(-1)
    weights = np.outer(w_jac, w_leg).reshape(-1) / 8.0
    points = np.column_stack([xi, eta])
    points.setflags(write=False)
    weights.setflags(write=False)
    return points, weights


@lru_cache(maxsize=None)
def reference_segment_rule(order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule on [0, 1]"""
    n = points_for_order(order)
    t, w = roots_legendre(n)
    points = (t + 1.0) / 2.0
    weights = w / 2.0
    points.setflags(write=False)
    weights.setflags(write=False)
    return points, weights


def triangle_areas(triangles: np.ndarray) -> np.ndarray:
    """Signed areas of an (n, 3, 2) stack of triangles"""
    e1 = triangles[:, 1] - triangles[:, 0]
    e2 = triangles[:, 2] - triangles[:, 0]
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def element_rule(triangles: np.ndarray, order: int) -> QuadratureRule:
    """
    Rule on a polygon given by its sub-triangulation (n, 3, 2).
    Integrates every polynomial of total degree <= order exactly.
    """
    ref_points, ref_weights = reference_triangle_rule(order)
    triangles = np.asarray(triangles, dtype=float).reshape(-1, 3, 2)
    origin = triangles[:, 0]
    e1 = triangles[:, 1] - origin
    e2 = triangles[:, 2] - origin
    jac = np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    points = (
        origin[:, None, :]
        + ref_points[None, :, 0, None] * e1[:, None, :]
        + ref_points[None, :, 1, None] * e2[:, None, :]
    )
    weights = jac[:, None] * ref_weights[None, :]
    return QuadratureRule(points=points.reshape(-1, 2), weights=weights.reshape(-1))


def face_rule(endpoints: np.ndarray, order: int) -> QuadratureRule:
    """Gauss-Legendre rule on the segment endpoints[0] -> endpoints[1]"""
    _check_order(order)
    ref_points, ref_weights = reference_segment_rule(order)
    a, b = np.asarray(endpoints, dtype=float)
    length = float(np.hypot(*(b - a)))
    points = a[None, :] + ref_points[:, None] * (b - a)[None, :]
    return QuadratureRule(points=points, weights=ref_weights * length)
