from types import SimpleNamespace

import numpy as np
import pytest

from app.core.exceptions import SpaceMismatchError
from app.schemas.schemas import PenaltyParams
from app.services.assembly import (
    assemble_load,
    assemble_sipg,
    dg_error,
    dg_norm_gram,
    penalty_sigma,
)
from app.services.dgspace import build_space, l2_error, project

BOUNDARY_SIGMA_TRI4 = 10.0 / (0.25 * np.sqrt(2.0))


def fake_mesh(*diameters):
    return SimpleNamespace(elements=[SimpleNamespace(diameter=d) for d in diameters])


def test_penalty_interior_face_uses_smaller_element():
    face = SimpleNamespace(element_plus=0, element_minus=1)
    assert penalty_sigma(face, PenaltyParams(C_sigma=10, p=2), fake_mesh(0.1, 0.2)) == pytest.approx(400.0)


def test_penalty_boundary_face():
    face = SimpleNamespace(element_plus=0, element_minus=None)
    assert penalty_sigma(face, PenaltyParams(C_sigma=10, p=1), fake_mesh(0.1)) == pytest.approx(100.0)


def test_unit_square_constant_mode(unit_square):
    space = build_space(unit_square, 1)
    A = assemble_sipg(space, PenaltyParams(C_sigma=10, p=1))
    G = dg_norm_gram(space, PenaltyParams(C_sigma=10, p=1))
    assert A.n == 3
    assert A.matrix[0, 0] == pytest.approx(40.0 / np.sqrt(2.0), rel=1e-12)
    assert G.matrix[0, 0] == pytest.approx(40.0 / np.sqrt(2.0), rel=1e-12)


@pytest.mark.parametrize("p", [1, 2])
def test_operator_is_symmetric_positive_definite(voronoi64, p):
    space = build_space(voronoi64, p)
    A = assemble_sipg(space)
    assert A.symmetric
    assert A.asymmetry() < 1e-13
    assert np.linalg.eigvalsh(A.matrix.toarray()).min() > 0


def test_sparsity_follows_element_adjacency(tri4):
    space = build_space(tri4, 1)
    A = assemble_sipg(space).matrix
    # each element couples to itself and its neighbours
    expected = sum(1 + len(nb) for nb in tri4.adjacency) * 9
    assert A.nnz == expected


def test_energy_of_linear_function(tri4):
    space = build_space(tri4, 1)
    u = project(space, lambda x, y: x + y)
    A = assemble_sipg(space, PenaltyParams(C_sigma=10, p=1)).matrix
    G = dg_norm_gram(space, PenaltyParams(C_sigma=10, p=1)).matrix
    # |grad u|^2 = 2, int u^2 ds = 16/3, int u du/dn ds = 2 on the boundary of the square
    assert u @ A @ u == pytest.approx(2.0 - 4.0 + BOUNDARY_SIGMA_TRI4 * 16.0 / 3.0, rel=1e-10)
    assert u @ G @ u == pytest.approx(2.0 + BOUNDARY_SIGMA_TRI4 * 16.0 / 3.0, rel=1e-10)


def test_load_vector(unit_square):
    space = build_space(unit_square, 1)
    np.testing.assert_array_equal(assemble_load(space, lambda x, y: np.zeros_like(x)), np.zeros(3))
    b = assemble_load(space, lambda x, y: np.ones_like(x))
    assert b @ b == pytest.approx(1.0, rel=1e-12)
    np.testing.assert_allclose(b[1:], 0.0, atol=1e-14)


def test_degree_mismatch(tri4):
    space = build_space(tri4, 1)
    with pytest.raises(SpaceMismatchError):
        assemble_sipg(space, PenaltyParams(p=2))


def test_dg_error_of_zero_is_energy_of_exact(tri4):
    space = build_space(tri4, 2)

    def gradient(x, y):
        return np.pi * np.column_stack([
            np.cos(np.pi * x) * np.sin(np.pi * y),
            np.sin(np.pi * x) * np.cos(np.pi * y),
        ])

    value = dg_error(space, np.zeros(space.dim), gradient)
    assert value == pytest.approx(np.pi / np.sqrt(2.0), rel=1e-6)


@pytest.mark.parametrize("p", [7, 8])
def test_error_norms_at_highest_degrees(tri4, p):
    space = build_space(tri4, p)
    u = project(space, lambda x, y: x ** 2 * y)

    def gradient(x, y):
        return np.column_stack([2 * x * y, x ** 2])

    assert dg_error(space, u, gradient) < 1e-9
    assert l2_error(space, u, lambda x, y: x ** 2 * y) < 1e-11
