import numpy as np
import pandas as pd
import pytest
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from app.core.exceptions import HierarchyError
from app.models.hierarchy import Agglomeration, MeshHierarchy
from app.services.hierarchy import (
    adjacency_matrix,
    agglomerate,
    aggregate_algebraic_mis,
    build_hierarchy,
    build_p_hierarchy,
    coarsen_mesh,
    load_hierarchy,
    quality_frame,
    quality_report,
    save_hierarchy,
)
from app.services.mesh import generate_structured_triangular


def assert_connected_aggregates(mesh, agglomeration):
    graph = adjacency_matrix(mesh)
    for children in agglomeration.children():
        assert children.size > 0
        count, _ = connected_components(graph[children][:, children], directed=False)
        assert count == 1


def test_single_element(unit_square):
    agglomeration = agglomerate(unit_square, 4, 0)
    assert agglomeration.coarse_count == 1
    assert list(agglomeration.fine_to_coarse) == [0]


def test_structured_agglomeration_is_total_and_connected(tri4):
    agglomeration = agglomerate(tri4, 4, 1)
    labels = agglomeration.fine_to_coarse
    assert labels.shape == (32,)
    assert set(labels) == set(range(agglomeration.coarse_count))
    assert 4 <= agglomeration.coarse_count <= 16
    assert_connected_aggregates(tri4, agglomeration)


def test_voronoi_agglomeration(voronoi64):
    agglomeration = agglomerate(voronoi64, 4, 2)
    assert 8 <= agglomeration.coarse_count <= 32
    assert_connected_aggregates(voronoi64, agglomeration)



def test_agglomeration_of_512_triangles():
    fine = generate_structured_triangular(16)
    agglomeration = agglomerate(fine, 4, 1)
    assert 64 <= agglomeration.coarse_count <= 256
    assert_connected_aggregates(fine, agglomeration)

def test_agglomeration_is_deterministic(voronoi64):
    first = agglomerate(voronoi64, 4, 5)
    second = agglomerate(voronoi64, 4, 5)
    np.testing.assert_array_equal(first.fine_to_coarse, second.fine_to_coarse)


def test_target_factor_range(tri4):
    with pytest.raises(HierarchyError):
        agglomerate(tri4, 1.5, 0)
    with pytest.raises(HierarchyError):
        agglomerate(tri4, 17, 0)


def test_hierarchy_levels_are_nested(tri8_hierarchy, tri8):
    assert tri8_hierarchy.n_levels == 3
    assert tri8_hierarchy.fine is tri8
    counts = [mesh.n_elements for mesh in tri8_hierarchy.levels]
    assert counts[0] < counts[1] < counts[2]
    for index, agglomeration in enumerate(tri8_hierarchy.maps):
        coarse, fine = tri8_hierarchy.levels[index], tri8_hierarchy.levels[index + 1]
        child_area = np.bincount(agglomeration.fine_to_coarse, weights=[e.area for e in fine.elements])
        np.testing.assert_allclose(child_area, [e.area for e in coarse.elements], rtol=1e-10)
        assert_connected_aggregates(fine, agglomeration)
        # every coarse vertex is a fine vertex
        fine_points = {tuple(v) for v in fine.vertices}
        assert all(tuple(v) in fine_points for v in coarse.vertices)


def test_coarse_faces_are_fine_faces(voronoi_hierarchy):
    coarse, fine = voronoi_hierarchy.levels
    fine_segments = {frozenset(map(tuple, fine.face_coordinates(f))) for f in range(fine.n_faces)}
    for f in range(coarse.n_faces):
        assert frozenset(map(tuple, coarse.face_coordinates(f))) in fine_segments


def test_two_levels_keep_input(tri4):
    hierarchy = build_hierarchy(tri4, 2, 1)
    assert hierarchy.n_levels == 2
    assert hierarchy.levels[-1] is tri4
    assert hierarchy.p_per_level == [1, 1]


def test_infeasible_depth(tri4):
    with pytest.raises(HierarchyError, match="smaller J"):
        build_hierarchy(tri4, 50, 1)


def test_degrees_must_not_decrease(tri4):
    with pytest.raises(HierarchyError):
        build_hierarchy(tri4, 2, [2, 1])


def test_p_hierarchy(tri4):
    hierarchy = build_p_hierarchy(tri4, [1, 2, 3])
    assert hierarchy.n_levels == 3
    assert all(mesh is tri4 for mesh in hierarchy.levels)
    np.testing.assert_array_equal(hierarchy.maps[0].fine_to_coarse, np.arange(32))


def test_subset_keeps_finest_levels(tri8_hierarchy):
    sub = tri8_hierarchy.subset(2)
    assert sub.n_levels == 2
    assert sub.fine is tri8_hierarchy.fine
    assert sub.maps[0] is tri8_hierarchy.maps[-1]


def test_quality_report(tri8_hierarchy):
    report = quality_report(tri8_hierarchy)
    assert len(report.levels) == 3
    assert all(q.theta_j >= 1 for q in report.levels)
    assert report.levels[0].coarsening_factor is None
    assert all(q.coarsening_factor > 1 for q in report.levels[1:])
    assert len(report.Theta_per_pair) == 2
    assert report.Theta > 1
    assert report.min_face_ratio >= 1.0 - 1e-12
    assert set(report.assumption_flags) == {"A1", "A2", "A3", "A4", "A5"}


def test_quality_skips_theta_without_coarsening(same_space_hierarchy):
    report = quality_report(same_space_hierarchy)
    assert report.Theta is None
    assert report.Theta_per_pair == [None]
    assert report.levels[0].theta_j == report.levels[1].theta_j


def test_sliver_aggregates_have_larger_theta(square_grid):
    fine = square_grid(4)
    rows = np.arange(16) // 4
    blocks = (rows // 2) * 2 + (np.arange(16) % 4) // 2
    thetas = {}
    for name, labels in (("strips", rows), ("blocks", blocks)):
        agglomeration = Agglomeration(fine_to_coarse=labels, coarse_count=4)
        coarse = coarsen_mesh(fine, agglomeration)
        report = quality_report(MeshHierarchy([coarse, fine], [agglomeration], [1, 1]))
        thetas[name] = report.Theta
    assert thetas["blocks"] == pytest.approx(2.0)
    assert thetas["strips"] == pytest.approx(np.sqrt(17.0 / 16.0) / (0.25 * np.sqrt(2.0)))
    assert thetas["strips"] > thetas["blocks"]


def test_mis_on_diagonal_matrix():
    agglomeration = aggregate_algebraic_mis(sp.identity(5, format="csr"))
    assert agglomeration.coarse_count == 5
    np.testing.assert_array_equal(agglomeration.fine_to_coarse, np.arange(5))


def test_mis_on_path_graph():
    path = sp.diags([-np.ones(4), 2 * np.ones(5), -np.ones(4)], [-1, 0, 1], format="csr")
    agglomeration = aggregate_algebraic_mis(path)
    labels = agglomeration.fine_to_coarse
    roots = [i for i in range(5) if list(labels).index(labels[i]) == i]
    assert all(abs(a - b) > 1 for a in roots for b in roots if a != b)
    assert agglomeration.coarse_count == 3
    assert set(labels) == {0, 1, 2}


def test_mis_errors():
    with pytest.raises(HierarchyError):
        aggregate_algebraic_mis(sp.csr_matrix((0, 0)))
    with pytest.raises(HierarchyError):
        aggregate_algebraic_mis(sp.csr_matrix(np.array([[1.0, 1.0], [0.0, 1.0]])))


def test_save_load_round_trip(tmp_path, tri8_hierarchy):
    save_hierarchy(tri8_hierarchy, tmp_path)
    assert (tmp_path / "level_3_to_2.json").exists()
    loaded = load_hierarchy(tmp_path)
    assert [m.n_elements for m in loaded.levels] == [m.n_elements for m in tri8_hierarchy.levels]
    for a, b in zip(loaded.maps, tri8_hierarchy.maps):
        np.testing.assert_array_equal(a.fine_to_coarse, b.fine_to_coarse)
    quality = pd.read_csv(tmp_path / "quality.csv")
    assert list(quality["level"].astype(str)) == ["1", "2", "3", "Theta_2_1", "Theta_3_2"]
    report = quality_report(tri8_hierarchy)
    np.testing.assert_allclose(quality["theta_j"].iloc[3:], report.Theta_per_pair)


def test_quality_frame_has_one_theta_row_per_pair(voronoi_hierarchy):
    frame = quality_frame(quality_report(voronoi_hierarchy))
    assert list(frame["level"]) == [1, 2, "Theta_2_1"]
    assert frame["theta_j"].iloc[-1] == pytest.approx(quality_report(voronoi_hierarchy).Theta)


def test_mis_matches_serial_natural_order_on_grid_graph(square_grid):
    mesh = square_grid(4)
    graph = adjacency_matrix(mesh) + sp.identity(16, format="csr")
    agglomeration = aggregate_algebraic_mis(graph)
    labels = agglomeration.fine_to_coarse
    roots = sorted({list(labels).index(label) for label in set(labels)})
    assert roots[0] == 0
    adjacency = adjacency_matrix(mesh).tocsr()
    for a in roots:
        assert not set(adjacency.indices[adjacency.indptr[a]:adjacency.indptr[a + 1]]) & set(roots)
    # maximality: every non-root touches a root
    for i in set(range(16)) - set(roots):
        assert set(adjacency.indices[adjacency.indptr[i]:adjacency.indptr[i + 1]]) & set(roots)
