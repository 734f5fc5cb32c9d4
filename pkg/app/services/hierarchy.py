"""
Nested coarse meshes by element agglomeration, hierarchy quality reports
and maximal-independent-set aggregation of matrix graphs.
"""
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
import scipy.sparse as sp
from pyamg import amg_core
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

from app.core.config import MAX_DEGREE, RNG_SEED, TARGET_FACTOR
from app.core.exceptions import HierarchyError, MeshError
from app.core.logging import get_logger
from app.core.storage import PathLike, read_json, write_csv, write_json
from app.models.hierarchy import Agglomeration, MeshHierarchy
from app.models.mesh import PolyMesh
from app.schemas.schemas import LevelQuality, QualityReport
from app.services.mesh import build_mesh, load_mesh, save_mesh
from app.services.quadrature import triangle_areas

logger = get_logger(__name__)

MIN_COARSE_ELEMENTS = 4
NESTING_RTOL = 1e-10

# Assumption proxy thresholds; reported, never enforced
A1_MAX_FACE_SIMPLEX_RATIO = 50.0
A2_MIN_AREA_RATIO = 0.02
A3_MIN_SUBTRI_RATIO = 1e-4
A3_MAX_SUBTRIANGLES = 512
A4_MAX_COVERING = 200
A5_MAX_THETA = 10.0


# Graph helpers
def adjacency_matrix(mesh: PolyMesh) -> sp.csr_matrix:
    """Symmetric 0/1 element adjacency through shared faces"""
    rows, cols = [], []
    for face in mesh.faces:
        if face.element_minus is not None:
            rows += [face.element_plus, face.element_minus]
            cols += [face.element_minus, face.element_plus]
    n = mesh.n_elements
    graph = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
    graph.data[:] = 1.0
    return graph


def boundary_elements(mesh: PolyMesh) -> np.ndarray:
    """
    I'm listing elements that own a boundary face.
    """
    touching = np.zeros(mesh.n_elements, dtype=bool)
    for face in mesh.faces:
        if face.is_boundary:
            touching[face.element_plus] = True
    return touching


def _shape_score(mesh: PolyMesh, members: Sequence[int]) -> float:
    """diameter^2 / area of the union of `members`; lower is rounder"""
    ids = sorted({v for k in members for v in mesh.elements[k].vertex_ids})
    coords = mesh.vertices[ids]
    area = sum(mesh.elements[k].area for k in members)
    return float(pdist(coords).max() ** 2 / area)


def _relabel(labels: np.ndarray) -> Agglomeration:
    """Compact labels in order of first appearance"""
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first, kind="stable"), kind="stable")
    mapped = order[inverse].astype(np.int64)
    return Agglomeration(fine_to_coarse=mapped, coarse_count=int(mapped.max()) + 1)


def _fill_holes(mesh: PolyMesh, labels: np.ndarray, graph: sp.csr_matrix) -> np.ndarray:
    """
    Aggregates must be simply connected: complement components that do not
    reach the boundary of the square are absorbed by the aggregate around them.
    """
    touching = boundary_elements(mesh)
    labels = labels.copy()
    changed = True
    while changed:
        changed = False
        for aggregate in np.unique(labels):
            outside = np.flatnonzero(labels != aggregate)
            if outside.size == 0:
                continue
            count, parts = connected_components(graph[outside][:, outside], directed=False)
            if count == 1 and touching[outside].any():
                continue
            for part in range(count):
                members = outside[parts == part]
                if not touching[members].any():
                    logger.debug("aggregate %d encloses %d elements; absorbing them", aggregate, members.size)
                    labels[members] = aggregate
                    changed = True
            if changed:
                break
    return labels


# Agglomeration
def agglomerate(mesh: PolyMesh, target_factor: float = TARGET_FACTOR, rng_seed: int = RNG_SEED) -> Agglomeration:
    """
    I'm aggregating the element graph greedily from seeds.

    Seeds are the unassigned elements with the fewest unassigned neighbours
    (ties broken by a seeded random rank); an aggregate grows by the
    neighbour that keeps diameter^2 / area smallest until it has
    `target_factor` members. Left-over singletons join their best-shaped
    neighbouring aggregate and enclosed regions are absorbed.
    """
    if not 2 <= target_factor <= 16:
        raise HierarchyError(f"target_factor must lie in [2, 16], got {target_factor}")
    n = mesh.n_elements
    if n == 1:
        return Agglomeration(fine_to_coarse=np.zeros(1, dtype=np.int64), coarse_count=1)

    graph = adjacency_matrix(mesh)
    n_parts, _ = connected_components(graph, directed=False)
    if n_parts > 1:
        raise HierarchyError(f"mesh is disconnected ({n_parts} components)")

    neighbours = mesh.adjacency
    rank = np.random.default_rng(rng_seed).permutation(n)
    labels = np.full(n, -1, dtype=np.int64)
    free_degree = np.array([len(nb) for nb in neighbours], dtype=np.int64)

    def assign(k: int, label: int) -> None:
        labels[k] = label
        for nb in neighbours[k]:
            free_degree[nb] -= 1

    n_aggregates = 0
    while True:
        free = np.flatnonzero(labels < 0)
        if free.size == 0:
            break
        key = free_degree[free] * n + rank[free]
        seed = int(free[np.argmin(key)])
        members = [seed]
        assign(seed, n_aggregates)
        while len(members) < target_factor:
            candidates = sorted({nb for k in members for nb in neighbours[k] if labels[nb] < 0})
            if not candidates:
                break
            scores = [_shape_score(mesh, members + [c]) for c in candidates]
            best = candidates[int(np.argmin(scores))]
            members.append(best)
            assign(best, n_aggregates)
        n_aggregates += 1

    sizes = np.bincount(labels, minlength=n_aggregates)
    for aggregate in np.flatnonzero(sizes == 1):
        members = np.flatnonzero(labels == aggregate)
        if members.size != 1:
            continue
        k = int(members[0])
        options = sorted({int(labels[nb]) for nb in neighbours[k]} - {int(aggregate)})
        if not options:
            continue
        scores = [_shape_score(mesh, list(np.flatnonzero(labels == o)) + [k]) for o in options]
        labels[k] = options[int(np.argmin(scores))]

    labels = _fill_holes(mesh, labels, graph)
    agglomeration = _relabel(labels)
    logger.debug("agglomerated %d elements into %d aggregates", n, agglomeration.coarse_count)
    return agglomeration


def _boundary_loops(edges: List[tuple]) -> List[List[int]]:
    """Chains directed edges into closed vertex loops"""
    outgoing: Dict[int, List[int]] = {}
    for a, b in sorted(edges):
        outgoing.setdefault(a, []).append(b)
    loops = []
    remaining = len(edges)
    while remaining:
        start = min(v for v, targets in outgoing.items() if targets)
        loop = [start]
        current = outgoing[start].pop(0)
        remaining -= 1
        while current != start:
            loop.append(current)
            if not outgoing.get(current):
                raise HierarchyError("aggregate boundary is not closed")
            current = outgoing[current].pop(0)
            remaining -= 1
        loops.append(loop)
    return loops


def _splice(loops: List[List[int]]) -> List[int]:
    """Joins loops sharing a vertex into one weakly simple loop"""
    merged = loops[0]
    pending = loops[1:]
    while pending:
        for index, loop in enumerate(pending):
            shared = set(merged) & set(loop)
            if shared:
                v = min(shared)
                i, j = merged.index(v), loop.index(v)
                merged = merged[:i] + loop[j:] + loop[:j] + merged[i:]
                del pending[index]
                break
        else:
            raise HierarchyError("aggregate has a hole; its boundary has disjoint loops")
    return merged


def coarsen_mesh(fine: PolyMesh, agglomeration: Agglomeration) -> PolyMesh:
    """
    I'm building the coarse mesh whose elements are the outer boundaries of the aggregates.
    Every fine vertex on an aggregate boundary is kept, so coarse faces are
    exactly the fine faces separating aggregates.
    """
    labels = agglomeration.fine_to_coarse
    edges: List[List[tuple]] = [[] for _ in range(agglomeration.coarse_count)]
    for face in fine.faces:
        a, b = face.endpoint_ids
        plus = labels[face.element_plus]
        if face.element_minus is None:
            edges[plus].append((a, b))
            continue
        minus = labels[face.element_minus]
        if plus != minus:
            edges[plus].append((a, b))
            edges[minus].append((b, a))

    renumber: Dict[int, int] = {}
    polygons = []
    for aggregate, aggregate_edges in enumerate(edges):
        loop = _splice(_boundary_loops(aggregate_edges))
        ids = []
        for v in loop:
            if v not in renumber:
                renumber[v] = len(renumber)
            ids.append(renumber[v])
        polygons.append(ids)
    used = np.empty(len(renumber), dtype=np.int64)
    for old, new in renumber.items():
        used[new] = old
    sub_tri = [np.concatenate([fine.sub_tri[k] for k in children]) for children in agglomeration.children()]
    try:
        return build_mesh(fine.vertices[used], polygons, sub_tri)
    except MeshError as exc:
        raise HierarchyError(f"coarse mesh is invalid: {exc.detail}") from exc


def _check_nesting(coarse: PolyMesh, fine: PolyMesh, agglomeration: Agglomeration) -> None:
    child_area = np.bincount(
        agglomeration.fine_to_coarse,
        weights=[e.area for e in fine.elements],
        minlength=agglomeration.coarse_count,
    )
    area = np.array([e.area for e in coarse.elements])
    bad = np.flatnonzero(np.abs(child_area - area) > NESTING_RTOL * area)
    if bad.size:
        raise HierarchyError(f"coarse element {int(bad[0])} is not the union of its children")


def _degrees(p: Union[int, Sequence[int]], n_levels: int) -> List[int]:
    degrees = [int(p)] * n_levels if isinstance(p, (int, np.integer)) else [int(q) for q in p]
    if len(degrees) != n_levels:
        raise HierarchyError(f"{len(degrees)} degrees given for {n_levels} levels")
    if any(q < 1 or q > MAX_DEGREE for q in degrees):
        raise HierarchyError(f"degrees must lie in [1, {MAX_DEGREE}]")
    if any(a > b for a, b in zip(degrees, degrees[1:])):
        raise HierarchyError("degrees must not decrease from coarse to fine")
    return degrees


def build_hierarchy(
    fine: PolyMesh,
    levels: int,
    p: Union[int, Sequence[int]] = 1,
    target_factor: float = TARGET_FACTOR,
    rng_seed: int = RNG_SEED,
) -> MeshHierarchy:
    """
    I'm agglomerating the fine mesh into n_levels nested meshes, coarsest first.
    `p` is one degree for all levels or one per level.
    """
    if levels < 2:
        raise HierarchyError(f"a hierarchy needs at least 2 levels, got {levels}")
    degrees = _degrees(p, levels)
    if fine.n_elements < target_factor ** (levels - 1):
        raise HierarchyError(
            f"{fine.n_elements} elements cannot be agglomerated {levels - 1} times by a factor "
            f"{target_factor:g}; use a smaller J"
        )
    meshes = [fine]
    maps: List[Agglomeration] = []
    for step in range(levels - 1):
        current = meshes[0]
        agglomeration = agglomerate(current, target_factor, rng_seed + step)
        if agglomeration.coarse_count < MIN_COARSE_ELEMENTS:
            raise HierarchyError(
                f"level {levels - step - 1} would have {agglomeration.coarse_count} elements "
                f"(< {MIN_COARSE_ELEMENTS}); use a smaller J"
            )
        if agglomeration.coarse_count == current.n_elements:
            raise HierarchyError("agglomeration did not coarsen the mesh")
        coarse = coarsen_mesh(current, agglomeration)
        _check_nesting(coarse, current, agglomeration)
        meshes.insert(0, coarse)
        maps.insert(0, agglomeration)
    logger.info("hierarchy: element counts %s, degrees %s", [m.n_elements for m in meshes], degrees)
    return MeshHierarchy(levels=meshes, maps=maps, p_per_level=degrees)


def build_p_hierarchy(mesh: PolyMesh, degrees: Sequence[int]) -> MeshHierarchy:
    """
    I'm stacking the same mesh with coarse-to-fine non-decreasing degrees.
    """
    degrees = _degrees(list(degrees), len(degrees))
    if len(degrees) < 2:
        raise HierarchyError("a hierarchy needs at least 2 levels")
    identity = Agglomeration(fine_to_coarse=np.arange(mesh.n_elements), coarse_count=mesh.n_elements)
    return MeshHierarchy(
        levels=[mesh] * len(degrees),
        maps=[identity] * (len(degrees) - 1),
        p_per_level=degrees,
    )


# Quality
def _face_simplex_ratio(mesh: PolyMesh) -> float:
    """Max over faces and owners of h_k |F| / (2 |T_F|), T_F the sub-triangle on F"""
    worst = 0.0
    for index, face in enumerate(mesh.faces):
        pa, pb = mesh.face_coordinates(index)
        tol = 1e-9 * face.length
        for k in (face.element_plus, face.element_minus):
            if k is None:
                continue
            triangles = mesh.sub_tri[k]
            near_a = np.linalg.norm(triangles - pa, axis=2).min(axis=1) <= tol
            near_b = np.linalg.norm(triangles - pb, axis=2).min(axis=1) <= tol
            carrying = np.flatnonzero(near_a & near_b)
            if carrying.size == 0:
                return float("inf")
            area = triangle_areas(triangles[carrying]).max()
            worst = max(worst, mesh.elements[k].diameter * face.length / (2.0 * area))
    return worst


def level_quality(mesh: PolyMesh, level: int, coarser: Optional[PolyMesh] = None) -> LevelQuality:
    """
    I'm measuring the shape statistics of one level; the coarsening factor
    needs the next coarser mesh.
    """
    diameters = np.array([e.diameter for e in mesh.elements])
    areas = np.array([e.area for e in mesh.elements])
    centroids = np.array([e.centroid for e in mesh.elements])
    smallest_subtri = np.array([triangle_areas(t).min() for t in mesh.sub_tri])
    tree = cKDTree(centroids)
    covering = [len(tree.query_ball_point(c, 2.0 * d)) for c, d in zip(centroids, diameters)]
    return LevelQuality(
        level=level,
        element_count=mesh.n_elements,
        theta_j=mesh.theta,
        max_faces=max(len(f) for f in mesh.element_faces),
        h=mesh.h,
        coarsening_factor=None if coarser is None else mesh.n_elements / coarser.n_elements,
        face_simplex_ratio=_face_simplex_ratio(mesh),
        min_area_ratio=float((areas / diameters ** 2).min()),
        min_subtri_ratio=float((smallest_subtri / areas).min()),
        max_subtriangles=max(len(t) for t in mesh.sub_tri),
        max_covering=max(covering),
    )


def face_ratios(coarse: PolyMesh, fine: PolyMesh, agglomeration: Agglomeration) -> np.ndarray:
    """h_coarse / h_fine for both sides of every fine face lying on a coarse face"""
    labels = agglomeration.fine_to_coarse
    ratios = []
    for face in fine.faces:
        sides = [face.element_plus] if face.is_boundary else [face.element_plus, face.element_minus]
        if not face.is_boundary and labels[face.element_plus] == labels[face.element_minus]:
            continue
        for k in sides:
            ratios.append(coarse.elements[labels[k]].diameter / fine.elements[k].diameter)
    return np.array(ratios)


def quality_report(hierarchy: MeshHierarchy) -> QualityReport:
    """
    I'm collecting level qualities, the per-pair Theta and the assumption flags.
    """
    levels = []
    for index, mesh in enumerate(hierarchy.levels):
        coarser = hierarchy.levels[index - 1] if index > 0 else None
        levels.append(level_quality(mesh, index + 1, coarser))

    per_pair: List[Optional[float]] = []
    minima = []
    for index, agglomeration in enumerate(hierarchy.maps):
        coarse, fine = hierarchy.levels[index], hierarchy.levels[index + 1]
        if coarse.n_elements == fine.n_elements:
            per_pair.append(None)
            continue
        ratios = face_ratios(coarse, fine, agglomeration)
        per_pair.append(float(ratios.max()))
        minima.append(float(ratios.min()))
    measured = [t for t in per_pair if t is not None]
    Theta = max(measured) if measured else None
    min_face_ratio = min(minima) if minima else None

    flags = {
        "A1": all(q.face_simplex_ratio <= A1_MAX_FACE_SIMPLEX_RATIO for q in levels),
        "A2": all(q.min_area_ratio >= A2_MIN_AREA_RATIO for q in levels),
        "A3": all(
            q.min_subtri_ratio >= A3_MIN_SUBTRI_RATIO and q.max_subtriangles <= A3_MAX_SUBTRIANGLES for q in levels
        ),
        "A4": all(q.max_covering <= A4_MAX_COVERING for q in levels),
        "A5": Theta is None or (Theta <= A5_MAX_THETA and min_face_ratio > 1.0),
    }
    failed = [name for name, ok in flags.items() if not ok]
    if failed:
        logger.warning("hierarchy fails assumption proxies %s", ", ".join(failed))
    return QualityReport(
        levels=levels,
        Theta=Theta,
        Theta_per_pair=per_pair,
        min_face_ratio=min_face_ratio,
        assumption_flags=flags,
    )


def quality_frame(report: QualityReport) -> pd.DataFrame:
    """
    I'm laying out per-level rows followed by one Theta row per consecutive
    pair, labelled Theta_<fine>_<coarse> with 1-based levels.
    """
    rows = [q.model_dump() for q in report.levels]
    columns = list(rows[0])
    for index, theta in enumerate(report.Theta_per_pair):
        row = dict.fromkeys(columns)
        row["level"] = f"Theta_{index + 2}_{index + 1}"
        row["theta_j"] = theta
        rows.append(row)
    return pd.DataFrame(rows, columns=columns)


# Algebraic aggregation
def aggregate_algebraic_mis(matrix) -> Agglomeration:
    """
    I'm aggregating the off-diagonal graph around a maximal independent set
    picked in natural order; every other vertex joins its most strongly
    coupled root.
    """
    A = sp.csr_matrix(getattr(matrix, "matrix", matrix))
    n = A.shape[0]
    if n == 0:
        raise HierarchyError("cannot aggregate an empty matrix")
    pattern = (A != 0).astype(np.int8)
    if (pattern - pattern.T).count_nonzero():
        raise HierarchyError("matrix sparsity pattern is not symmetric")
    A = A.tolil()
    A.setdiag(0)
    A = A.tocsr()
    A.eliminate_zeros()
    A.sort_indices()

    state = np.full(n, -1, dtype=np.intc)
    amg_core.maximal_independent_set_serial(
        n, A.indptr.astype(np.intc), A.indices.astype(np.intc), -1, 1, 0, state
    )
    is_root = state == 1

    root_label = np.cumsum(is_root) - 1
    labels = np.where(is_root, root_label, -1)
    for i in np.flatnonzero(~is_root):
        cols = A.indices[A.indptr[i]:A.indptr[i + 1]]
        vals = np.abs(A.data[A.indptr[i]:A.indptr[i + 1]])
        roots = is_root[cols]
        strongest = cols[roots][np.argmax(vals[roots])]
        labels[i] = root_label[strongest]
    return Agglomeration(fine_to_coarse=labels.astype(np.int64), coarse_count=int(is_root.sum()))


# Persistence
def save_hierarchy(hierarchy: MeshHierarchy, directory: PathLike, report: Optional[QualityReport] = None) -> None:
    """
    I'm writing level_k.json (k = 1 coarse ... J fine), level_k_to_{k-1}.json,
    degrees.json and quality.csv.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for index, mesh in enumerate(hierarchy.levels):
        save_mesh(mesh, directory / f"level_{index + 1}.json")
    for index, agglomeration in enumerate(hierarchy.maps):
        k = index + 2
        write_json(directory / f"level_{k}_to_{k - 1}.json", [int(c) for c in agglomeration.fine_to_coarse])
    write_json(directory / "degrees.json", list(hierarchy.p_per_level))
    if report is None:
        report = quality_report(hierarchy)
    write_csv(directory / "quality.csv", quality_frame(report))


def load_hierarchy(directory: PathLike) -> MeshHierarchy:
    """
    I'm reading a hierarchy directory back and checking its nesting.
    """
    directory = Path(directory)
    n_levels = 0
    while (directory / f"level_{n_levels + 1}.json").exists():
        n_levels += 1
    if n_levels < 2:
        raise HierarchyError(f"{directory} holds fewer than 2 levels")
    meshes = [load_mesh(directory / f"level_{k}.json") for k in range(1, n_levels + 1)]
    maps = []
    for k in range(2, n_levels + 1):
        map_path = directory / f"level_{k}_to_{k - 1}.json"
        if not map_path.exists():
            raise HierarchyError(f"missing agglomeration map {map_path.name}")
        labels = np.array(read_json(map_path), dtype=np.int64)
        coarse, fine = meshes[k - 2], meshes[k - 1]
        if labels.shape != (fine.n_elements,) or labels.min() < 0 or labels.max() >= coarse.n_elements:
            raise HierarchyError(f"map level_{k}_to_{k - 1} does not match the meshes")
        agglomeration = Agglomeration(fine_to_coarse=labels, coarse_count=coarse.n_elements)
        _check_nesting(coarse, fine, agglomeration)
        maps.append(agglomeration)
    degrees_path = directory / "degrees.json"
    degrees = read_json(degrees_path) if degrees_path.exists() else 1
    return MeshHierarchy(levels=meshes, maps=maps, p_per_level=_degrees(degrees, n_levels))
