from dataclasses import dataclass, field
from functools import cached_property
from typing import List, Optional, Tuple

import numpy as np


@dataclass(frozen=True, eq=False)
class Polygon:
    """
    One mesh element: counter-clockwise vertex ids plus the geometric
    quantities the penalty and the bases depend on.
    """
    vertex_ids: Tuple[int, ...]
    diameter: float
    area: float
    centroid: np.ndarray

    @property
    def n_vertices(self) -> int:
        return len(self.vertex_ids)


@dataclass(frozen=True, eq=False)
class Face:
    """
    A straight segment shared by at most two elements.
    The endpoints follow the counter-clockwise orientation of element_plus,
    so `normal` points out of element_plus.
    """
    endpoint_ids: Tuple[int, int]
    element_plus: int
    element_minus: Optional[int]
    length: float
    normal: np.ndarray

    @property
    def is_boundary(self) -> bool:
        return self.element_minus is None


@dataclass(frozen=True, eq=False)
class PolyMesh:
    """
    Polygonal partition of the unit square.
    `sub_tri[k]` holds the sub-triangulation of element k as an (n, 3, 2)
    array of counter-clockwise triangle corners.
    """
    vertices: np.ndarray
    elements: List[Polygon]
    faces: List[Face]
    sub_tri: List[np.ndarray] = field(repr=False)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def h(self) -> float:
        """Mesh size: largest element diameter"""
        return max(e.diameter for e in self.elements)

    @property
    def theta(self) -> float:
        """Quasi-uniformity ratio max h_k / min h_k"""
        diameters = [e.diameter for e in self.elements]
        return max(diameters) / min(diameters)

    @cached_property
    def element_faces(self) -> List[List[int]]:
        """Face indices touching each element"""
        table: List[List[int]] = [[] for _ in self.elements]
        for index, face in enumerate(self.faces):
            table[face.element_plus].append(index)
            if face.element_minus is not None:
                table[face.element_minus].append(index)
        return table

    @cached_property
    def adjacency(self) -> List[List[int]]:
        """Edge neighbours of each element, sorted"""
        table: List[set] = [set() for _ in self.elements]
        for face in self.faces:
            if face.element_minus is not None:
                table[face.element_plus].add(face.element_minus)
                table[face.element_minus].add(face.element_plus)
        return [sorted(s) for s in table]

    def element_coordinates(self, k: int) -> np.ndarray:
        return self.vertices[list(self.elements[k].vertex_ids)]

    def face_coordinates(self, f: int) -> np.ndarray:
        return self.vertices[list(self.faces[f].endpoint_ids)]
