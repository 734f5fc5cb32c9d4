import numpy as np
import pytest

from app.services.hierarchy import build_hierarchy, build_p_hierarchy
from app.services.mesh import build_mesh, generate_structured_triangular, generate_voronoi_lloyd


def make_square_grid(n: int):
    """n x n axis-aligned squares"""
    ticks = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(ticks, ticks)
    vertices = np.column_stack([xx.ravel(), yy.ravel()])
    cells = []
    for j in range(n):
        for i in range(n):
            v00 = j * (n + 1) + i
            cells.append((v00, v00 + 1, v00 + n + 2, v00 + n + 1))
    return build_mesh(vertices, cells)


@pytest.fixture
def square_grid():
    return make_square_grid


@pytest.fixture(scope="session")
def unit_square():
    vertices = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    return build_mesh(vertices, [(0, 1, 2, 3)])


@pytest.fixture(scope="session")
def tri4():
    return generate_structured_triangular(4)


@pytest.fixture(scope="session")
def tri8():
    return generate_structured_triangular(8)


@pytest.fixture(scope="session")
def voronoi64():
    return generate_voronoi_lloyd(64, lloyd_iters=10, rng_seed=3)


@pytest.fixture(scope="session")
def tri8_hierarchy(tri8):
    return build_hierarchy(tri8, 3, 1, target_factor=4, rng_seed=1)


@pytest.fixture(scope="session")
def voronoi_hierarchy(voronoi64):
    return build_hierarchy(voronoi64, 2, 1, target_factor=4, rng_seed=1)


@pytest.fixture(scope="session")
def same_space_hierarchy(tri4):
    return build_p_hierarchy(tri4, [1, 1])
