"""
Polygonal meshes of the unit square: generation, sub-triangulation, face
extraction, validation and the JSON file format.
"""
import json
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import shapely
import triangle
from scipy.sparse.csgraph import connected_components
from scipy.spatial import QhullError, Voronoi, cKDTree
from scipy.spatial.distance import pdist
from shapely.geometry import Polygon as ShapelyPolygon

from app.core.config import GEOM_TOL, LLOYD_ITERS, RNG_SEED
from app.core.exceptions import MeshGenerationError, MeshParseError, MeshValidityError
from app.core.logging import get_logger
from app.core.storage import PathLike, atomic_write
from app.models.mesh import Face, PolyMesh, Polygon
from app.services.quadrature import triangle_areas

logger = get_logger(__name__)

# Voronoi vertices closer than this to a side of the square are snapped onto it
BOUNDARY_SNAP = 1e-10
AREA_RTOL = 1e-10
SUBTRI_RTOL = 1e-12
PERIMETER_RTOL = 1e-10
MAX_RETRIES = 10


# Polygon geometry
def polygon_signed_area(coords: np.ndarray) -> float:
    """Shoelace formula; positive for counter-clockwise polygons"""
    x, y = coords[:, 0], coords[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_centroid(coords: np.ndarray) -> np.ndarray:
    x, y = coords[:, 0], coords[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * cross.sum()
    cx = ((x + xn) * cross).sum() / (6.0 * area)
    cy = ((y + yn) * cross).sum() / (6.0 * area)
    return np.array([cx, cy])


def polygon_diameter(coords: np.ndarray) -> float:
    """Exact diameter: largest pairwise vertex distance"""
    return float(pdist(coords).max())


def _turns(coords: np.ndarray) -> np.ndarray:
    prev = coords - np.roll(coords, 1, axis=0)
    nxt = np.roll(coords, -1, axis=0) - coords
    return prev[:, 0] * nxt[:, 1] - prev[:, 1] * nxt[:, 0]


def is_convex(coords: np.ndarray) -> bool:
    """Counter-clockwise convexity; straight (hanging-node) vertices allowed"""
    scale = polygon_diameter(coords) ** 2
    return bool(np.all(_turns(coords) >= -1e-12 * scale))


def is_simple(coords: np.ndarray) -> bool:
    """
    I'm checking that no two non-adjacent edges of the ring cross.
    Edges touching at a point (weakly simple agglomerates) are accepted.
    """
    n = len(coords)
    if n <= 3:
        return True
    edges = shapely.linestrings(np.stack([coords, np.roll(coords, -1, axis=0)], axis=1))
    i, j = np.triu_indices(n, k=2)
    keep = ~((i == 0) & (j == n - 1))
    return not bool(shapely.crosses(edges[i[keep]], edges[j[keep]]).any())


def make_polygon(vertex_ids: Sequence[int], vertices: np.ndarray) -> Polygon:
    """
    I'm caching diameter, area and centroid of an element.
    """
    coords = vertices[list(vertex_ids)]
    return Polygon(
        vertex_ids=tuple(int(v) for v in vertex_ids),
        diameter=polygon_diameter(coords),
        area=polygon_signed_area(coords),
        centroid=polygon_centroid(coords),
    )


# Sub-triangulation
def _constrained_triangulation(coords: np.ndarray) -> np.ndarray:
    """
    I'm triangulating a non-convex polygon as a planar straight-line graph.
    A pinch vertex repeats in the ring but enters the graph once.
    """
    points, ring = np.unique(coords, axis=0, return_inverse=True)
    ring = ring.ravel()
    segments = np.column_stack([ring, np.roll(ring, -1)])
    result = triangle.triangulate({"vertices": points, "segments": segments}, "pQ")
    if "triangles" not in result or len(result["triangles"]) == 0:
        raise MeshValidityError("constrained triangulation produced no triangles")
    triangles = result["vertices"][result["triangles"]]

    # Dropping triangles inside a pocket closed off by a pinch
    centroids = triangles.mean(axis=1)
    inside = shapely.contains_xy(ShapelyPolygon(coords), centroids[:, 0], centroids[:, 1])
    triangles = triangles[inside]

    # Making every triangle counter-clockwise
    flipped = triangle_areas(triangles) < 0
    triangles[flipped] = triangles[flipped][:, [0, 2, 1]]
    return triangles


def subtriangulate(coords: np.ndarray) -> np.ndarray:
    """
    Sub-triangulation of a simple counter-clockwise polygon as (n, 3, 2).
    Triangles are returned as-is, convex polygons are fanned from the centroid,
    everything else goes through a constrained triangulation.
    """
    coords = np.asarray(coords, dtype=float)
    if len(coords) < 3:
        raise MeshValidityError("polygon needs at least 3 vertices")
    if polygon_signed_area(coords) <= 0:
        raise MeshValidityError("polygon is not counter-clockwise or has zero area")
    if not is_simple(coords):
        raise MeshValidityError("polygon is self-intersecting")
    if len(coords) == 3:
        return coords[None, :, :].copy()
    if is_convex(coords):
        centroid = polygon_centroid(coords)
        nxt = np.roll(coords, -1, axis=0)
        return np.stack([np.broadcast_to(centroid, coords.shape), coords, nxt], axis=1)
    return _constrained_triangulation(coords)


# Faces
def _on_boundary(a: np.ndarray, b: np.ndarray) -> bool:
    for axis in (0, 1):
        for side in (0.0, 1.0):
            if abs(a[axis] - side) <= BOUNDARY_SNAP and abs(b[axis] - side) <= BOUNDARY_SNAP:
                return True
    return False


def extract_faces(elements: Sequence[Polygon], vertices: np.ndarray) -> List[Face]:
    """
    I'm turning every element edge into a face, either interior (two owners with
    opposite orientation) or boundary (one owner on the square's boundary).
    element_plus is the owner met first in element order.
    """
    owners: Dict[Tuple[int, int], List[Tuple[int, int, int]]] = {}
    for k, polygon in enumerate(elements):
        ids = polygon.vertex_ids
        for i in range(len(ids)):
            a, b = ids[i], ids[(i + 1) % len(ids)]
            if a == b:
                raise MeshValidityError(f"element {k} repeats vertex {a} on consecutive positions")
            owners.setdefault((min(a, b), max(a, b)), []).append((k, a, b))

    faces = []
    for key, entries in owners.items():
        if len(entries) > 2:
            raise MeshValidityError(f"edge {key} is shared by {len(entries)} elements")
        k_plus, a, b = entries[0]
        pa, pb = vertices[a], vertices[b]
        if len(entries) == 2:
            k_minus, c, d = entries[1]
            if k_minus == k_plus:
                raise MeshValidityError(f"element {k_plus} uses edge {key} twice")
            if (c, d) != (b, a):
                raise MeshValidityError(f"elements {k_plus} and {k_minus} traverse edge {key} in the same direction")
        else:
            k_minus = None
            if not _on_boundary(pa, pb):
                raise MeshValidityError(
                    f"edge {key} of element {k_plus} has a single owner but is not on the boundary (non-conforming mesh)"
                )
        tangent = pb - pa
        length = float(np.hypot(*tangent))
        if length <= GEOM_TOL:
            raise MeshValidityError(f"edge {key} has zero length")
        normal = np.array([tangent[1], -tangent[0]]) / length
        faces.append(Face(endpoint_ids=(a, b), element_plus=k_plus, element_minus=k_minus,
                          length=length, normal=normal))
    return faces


# Assembly of a mesh from raw data
def build_mesh(
    vertices: np.ndarray,
    vertex_lists: Sequence[Sequence[int]],
    sub_tri: Optional[Sequence[Optional[np.ndarray]]] = None,
    validate: bool = True,
) -> PolyMesh:
    """
    I'm turning vertex coordinates and counter-clockwise element vertex lists
    into a full PolyMesh. Missing sub-triangulations are computed.
    """
    vertices = np.asarray(vertices, dtype=float)
    elements = []
    for k, ids in enumerate(vertex_lists):
        if len(ids) < 3:
            raise MeshValidityError(f"element {k} has fewer than 3 vertices")
        polygon = make_polygon(ids, vertices)
        if polygon.area <= 0:
            raise MeshValidityError(f"element {k} is clockwise or degenerate (area {polygon.area:.3e})")
        elements.append(polygon)
    triangles = []
    for k, polygon in enumerate(elements):
        given = None if sub_tri is None else sub_tri[k]
        if given is None:
            try:
                given = subtriangulate(vertices[list(polygon.vertex_ids)])
            except MeshValidityError as exc:
                raise MeshValidityError(f"element {k}: {exc.detail}") from exc
        triangles.append(np.asarray(given, dtype=float).reshape(-1, 3, 2))
    faces = extract_faces(elements, vertices)
    mesh = PolyMesh(vertices=vertices, elements=elements, faces=faces, sub_tri=triangles)
    if validate:
        validate_mesh(mesh)
    return mesh


def validate_mesh(mesh: PolyMesh) -> None:
    """
    I'm raising MeshValidityError on the first violated invariant.
    """
    v = mesh.vertices
    if not np.all(np.isfinite(v)):
        raise MeshValidityError("non-finite vertex coordinates")
    if v.min() < -1e-12 or v.max() > 1 + 1e-12:
        raise MeshValidityError("vertices leave the unit square")

    total = sum(e.area for e in mesh.elements)
    if abs(total - 1.0) > AREA_RTOL:
        raise MeshValidityError(f"element areas sum to {total!r}, expected 1")

    for k, element in enumerate(mesh.elements):
        areas = triangle_areas(mesh.sub_tri[k])
        if np.any(areas <= 0):
            raise MeshValidityError(f"element {k} has a non-positive sub-triangle")
        if abs(areas.sum() - element.area) > SUBTRI_RTOL * element.area:
            raise MeshValidityError(f"sub-triangles of element {k} do not cover it")

    perimeter = np.zeros(mesh.n_elements)
    covered = np.zeros(mesh.n_elements)
    for k, element in enumerate(mesh.elements):
        coords = mesh.element_coordinates(k)
        perimeter[k] = np.linalg.norm(np.roll(coords, -1, axis=0) - coords, axis=1).sum()
    for face in mesh.faces:
        covered[face.element_plus] += face.length
        if face.element_minus is not None:
            covered[face.element_minus] += face.length
    bad = np.flatnonzero(np.abs(covered - perimeter) > PERIMETER_RTOL * perimeter)
    if bad.size:
        raise MeshValidityError(f"faces of element {int(bad[0])} do not cover its boundary")

    convex = [is_convex(mesh.element_coordinates(k)) for k in range(mesh.n_elements)]
    for index, face in enumerate(mesh.faces):
        if face.element_minus is None:
            continue
        gap = mesh.elements[face.element_minus].centroid - mesh.elements[face.element_plus].centroid
        if np.dot(face.normal, gap) <= 0:
            if convex[face.element_plus] and convex[face.element_minus]:
                raise MeshValidityError(f"normal of face {index} does not point from plus to minus")
            logger.warning("face %d: normal/centroid check skipped for non-convex owners", index)


# Generators
def generate_structured_triangular(n: int) -> PolyMesh:
    """
    I'm cutting n x n squares along their bottom-left to top-right diagonals.
    """
    if n < 1:
        raise MeshGenerationError(f"structured mesh needs n >= 1, got {n}")
    ticks = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(ticks, ticks)
    vertices = np.column_stack([xx.ravel(), yy.ravel()])
    cells = []
    for j in range(n):
        for i in range(n):
            v00 = j * (n + 1) + i
            v10, v01, v11 = v00 + 1, v00 + n + 1, v00 + n + 2
            cells.append((v00, v10, v11))
            cells.append((v00, v11, v01))
    return build_mesh(vertices, cells)


def _mirror(points: np.ndarray) -> np.ndarray:
    x, y = points[:, 0], points[:, 1]
    return np.vstack([
        points,
        np.column_stack([-x, y]),
        np.column_stack([2.0 - x, y]),
        np.column_stack([x, -y]),
        np.column_stack([x, 2.0 - y]),
    ])


def _clipped_voronoi(points: np.ndarray) -> Tuple[np.ndarray, List[List[int]]]:
    """
    Voronoi cells of `points` clipped to the unit square, obtained by
    mirroring the seeds across the four sides. Returns merged vertices and
    counter-clockwise cells.
    """
    n = len(points)
    if len(cKDTree(points).query_pairs(GEOM_TOL)):
        raise MeshGenerationError("duplicate seeds")
    try:
        diagram = Voronoi(_mirror(points))
    except QhullError as exc:
        raise MeshGenerationError(f"qhull failed: {exc}") from exc

    raw = diagram.vertices.copy()
    raw[np.abs(raw) < BOUNDARY_SNAP] = 0.0
    raw[np.abs(raw - 1.0) < BOUNDARY_SNAP] = 1.0

    regions = []
    for i in range(n):
        region = diagram.regions[diagram.point_region[i]]
        if -1 in region or len(region) < 3:
            raise MeshGenerationError(f"cell of seed {i} is unbounded")
        regions.append(region)

    # merge coincident Voronoi vertices (co-circular seeds)
    used = sorted({v for region in regions for v in region})
    pairs = cKDTree(raw[used]).query_pairs(GEOM_TOL, output_type="ndarray")
    graph = sp.coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(len(used), len(used)))
    _, component = connected_components(graph, directed=False)
    # the smallest index of a group represents it
    first = np.full(component.max() + 1, len(used))
    np.minimum.at(first, component, np.arange(len(used)))
    local = {v: int(first[component[i]]) for i, v in enumerate(used)}

    renumber: Dict[int, int] = {}
    coords: List[np.ndarray] = []
    cells = []
    for i, region in enumerate(regions):
        angles = np.arctan2(raw[region, 1] - points[i, 1], raw[region, 0] - points[i, 0])
        ordered = [local[region[k]] for k in np.argsort(angles, kind="stable")]
        cell = []
        for rep in ordered:
            if cell and cell[-1] == rep:
                continue
            cell.append(rep)
        if len(cell) > 1 and cell[0] == cell[-1]:
            cell.pop()
        if len(cell) < 3:
            raise MeshGenerationError(f"cell of seed {i} collapsed")
        ids = []
        for rep in cell:
            if rep not in renumber:
                renumber[rep] = len(coords)
                coords.append(raw[used[rep]])
            ids.append(renumber[rep])
        cells.append(ids)
    return np.array(coords), cells


def generate_voronoi_lloyd(
    n_seeds: int,
    lloyd_iters: int = LLOYD_ITERS,
    rng_seed: int = RNG_SEED,
    seeds: Optional[np.ndarray] = None,
) -> PolyMesh:
    """
    I'm generating a Lloyd-relaxed Voronoi mesh with exactly n_seeds cells.
    `seeds` replaces the random initial points when given.
    """
    if n_seeds < 4:
        raise MeshGenerationError(f"Voronoi mesh needs at least 4 seeds, got {n_seeds}")
    if lloyd_iters < 0:
        raise MeshGenerationError("lloyd_iters must be non-negative")
    rng = np.random.default_rng(rng_seed)
    if seeds is None:
        initial = rng.random((n_seeds, 2))
    else:
        initial = np.asarray(seeds, dtype=float).reshape(-1, 2)
        if len(initial) != n_seeds:
            raise MeshGenerationError(f"expected {n_seeds} seeds, got {len(initial)}")

    points = initial.copy()
    last_error: Optional[Exception] = None
    for attempt in range(MAX_RETRIES + 1):
        try:
            for _ in range(lloyd_iters):
                vertices, cells = _clipped_voronoi(points)
                points = np.array([polygon_centroid(vertices[c]) for c in cells])
            vertices, cells = _clipped_voronoi(points)
            mesh = build_mesh(vertices, cells)
            logger.info("Voronoi mesh: %d cells, %d faces, theta %.3f (attempt %d)",
                        mesh.n_elements, mesh.n_faces, mesh.theta, attempt)
            return mesh
        except (MeshGenerationError, MeshValidityError) as exc:
            last_error = exc
            logger.warning("Voronoi generation attempt %d failed: %s; perturbing seeds", attempt, exc)
            jitter = rng.normal(scale=1e-6, size=initial.shape)
            points = np.clip(initial + jitter, 1e-9, 1.0 - 1e-9)
    raise MeshGenerationError(f"degenerate seed configuration after {MAX_RETRIES} retries: {last_error}")


# File format
def _is_default_subtriangulation(mesh: PolyMesh, k: int) -> bool:
    try:
        default = subtriangulate(mesh.element_coordinates(k))
    except MeshValidityError:
        return False
    return default.shape == mesh.sub_tri[k].shape and np.array_equal(default, mesh.sub_tri[k])


def save_mesh(mesh: PolyMesh, path: PathLike) -> None:
    """
    One vertex / element per line so parse errors can name a line.
    Sub-triangulations are stored only where they differ from what
    subtriangulate would rebuild (agglomerates, non-convex elements).
    """
    lines = ["{", '"vertices": [']
    vertex_lines = [json.dumps([float(x), float(y)]) for x, y in mesh.vertices]
    lines.append(",\n".join(vertex_lines))
    lines.append("],")
    lines.append('"elements": [')
    lines.append(",\n".join(json.dumps(list(e.vertex_ids)) for e in mesh.elements))
    lines.append("],")
    lines.append('"sub_tri": [')
    stored = []
    for k in range(mesh.n_elements):
        if _is_default_subtriangulation(mesh, k):
            stored.append("null")
        else:
            stored.append(json.dumps(mesh.sub_tri[k].tolist()))
    lines.append(",\n".join(stored))
    lines.append("]")
    lines.append("}")
    with atomic_write(path) as handle:
        handle.write("\n".join(lines) + "\n")


def _locate(lines: List[str], key: str, index: int) -> Optional[int]:
    """1-based line of entry `index` inside the array stored under `key`"""
    for number, line in enumerate(lines):
        if f'"{key}"' in line:
            count = -1
            for offset, candidate in enumerate(lines[number + 1:], start=number + 2):
                if candidate.strip().startswith("["):
                    count += 1
                    if count == index:
                        return offset
            return number + 1
    return None


def load_mesh(path: PathLike) -> PolyMesh:
    """
    I'm reading a mesh JSON file; parse errors name the offending line.
    """
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise MeshParseError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MeshParseError(exc.msg, line=exc.lineno) from exc
    lines = text.splitlines()
    if not isinstance(payload, dict) or "vertices" not in payload or "elements" not in payload:
        raise MeshParseError("expected an object with 'vertices' and 'elements'", line=1)

    raw_vertices = payload["vertices"]
    for i, vertex in enumerate(raw_vertices):
        if not (isinstance(vertex, list) and len(vertex) == 2 and all(isinstance(c, (int, float)) for c in vertex)):
            raise MeshParseError(f"vertex {i} is not a coordinate pair", line=_locate(lines, "vertices", i))
    vertices = np.array(raw_vertices, dtype=float).reshape(-1, 2)

    elements = payload["elements"]
    for k, element in enumerate(elements):
        if not (isinstance(element, list) and all(isinstance(v, int) for v in element)):
            raise MeshParseError(f"element {k} is not a list of vertex indices", line=_locate(lines, "elements", k))
        missing = [v for v in element if v < 0 or v >= len(vertices)]
        if missing:
            raise MeshParseError(f"element {k} references missing vertex {missing[0]}",
                                 line=_locate(lines, "elements", k))

    sub_tri = payload.get("sub_tri")
    if sub_tri is not None:
        if len(sub_tri) != len(elements):
            raise MeshParseError("sub_tri must have one entry per element", line=_locate(lines, "sub_tri", 0))
        sub_tri = [None if t is None else np.array(t, dtype=float) for t in sub_tri]
    return build_mesh(vertices, elements, sub_tri)
