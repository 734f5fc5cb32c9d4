from dataclasses import dataclass
from typing import List

import numpy as np

from app.models.mesh import PolyMesh


@dataclass(frozen=True, eq=False)
class Agglomeration:
    """Fine element -> coarse element map"""
    fine_to_coarse: np.ndarray
    coarse_count: int

    def children(self) -> List[np.ndarray]:
        """Fine element indices of every coarse element, in ascending order"""
        order = np.argsort(self.fine_to_coarse, kind="stable")
        counts = np.bincount(self.fine_to_coarse, minlength=self.coarse_count)
        return np.split(order, np.cumsum(counts)[:-1])


@dataclass(frozen=True, eq=False)
class MeshHierarchy:
    """
    Nested meshes ordered coarse (index 0, level j=1) to fine (last, level J).
    maps[i] links levels[i + 1] to levels[i]; p_per_level follows the same order.
    """
    levels: List[PolyMesh]
    maps: List[Agglomeration]
    p_per_level: List[int]

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def fine(self) -> PolyMesh:
        return self.levels[-1]

    def subset(self, n_levels: int) -> "MeshHierarchy":
        """The finest `n_levels` levels as their own hierarchy"""
        start = self.n_levels - n_levels
        return MeshHierarchy(
            levels=self.levels[start:],
            maps=self.maps[start:],
            p_per_level=self.p_per_level[start:],
        )
