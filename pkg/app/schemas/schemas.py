from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

from app.core.config import (
    C_SIGMA,
    LAMBDA_SAFETY,
    MAX_DEGREE,
    MAX_ITER,
    N_JOBS,
    RNG_SEED,
    TARGET_FACTOR,
    TOL_REL,
)


class CycleType(str, Enum):
    TWO_LEVEL = "two_level"
    W_CYCLE = "w_cycle"


class SolverKind(str, Enum):
    """Solvers reachable from the command line"""
    TL = "tl"
    WCYCLE = "wcycle"
    CG = "cg"
    PCG = "pcg"
    AMG_MIS = "amg-mis"


class StudyKind(str, Enum):
    COERCIVITY = "coercivity"
    ITERATIONS = "iterations"
    CONTRACTION = "contraction"
    RATES = "rates"
    EIGSCALING = "eigscaling"
    AMG = "amg"


# Discretization schemas
class PenaltyParams(BaseModel):
    """Interior penalty constant and polynomial degree"""
    C_sigma: float = Field(default=C_SIGMA, gt=0)
    p: int = Field(default=1, ge=1, le=MAX_DEGREE)


# Solver schemas
class MultigridConfig(BaseModel):
    """Two-level / W-cycle settings; m1, m2 are pre/post smoothing steps"""
    m1: int = Field(default=3, ge=0)
    m2: int = Field(default=3, ge=0)
    levels: int = Field(default=2, ge=2)
    cycle: CycleType = CycleType.TWO_LEVEL
    lambda_safety: float = Field(default=LAMBDA_SAFETY, ge=1.0)
    tol_rel: float = Field(default=TOL_REL, gt=0)
    max_iter: int = Field(default=MAX_ITER, ge=1)


class SolveReport(BaseModel):
    """Outcome of one iterative solve"""
    iterations: int
    residual_history: List[float]
    rho: float
    converged: bool
    diverged: bool = False
    wall_time: float = 0.0
    config: Dict[str, object] = Field(default_factory=dict)

    @property
    def final_residual(self) -> float:
        return self.residual_history[-1]


# Hierarchy schemas
class LevelQuality(BaseModel):
    """Quality indicators of one level (level 1 is the coarsest)"""
    level: int
    element_count: int
    theta_j: float = Field(..., ge=1.0)
    max_faces: int
    h: float
    coarsening_factor: Optional[float] = None
    face_simplex_ratio: float
    min_area_ratio: float
    min_subtri_ratio: float
    max_subtriangles: int
    max_covering: int


class QualityReport(BaseModel):
    """Mesh hierarchy quality against the geometric assumptions"""
    levels: List[LevelQuality]
    Theta: Optional[float] = None
    Theta_per_pair: List[Optional[float]] = Field(default_factory=list)
    min_face_ratio: Optional[float] = None
    assumption_flags: Dict[str, bool] = Field(default_factory=dict)


# Analysis schemas
class StudyConfig(BaseModel):
    """One experiment: mesh sets x degrees x smoothing steps x level counts"""
    model_config = ConfigDict(extra="forbid")

    sets: List[str] = Field(default_factory=lambda: ["voronoi:512"], min_length=1)
    degrees: List[int] = Field(default_factory=lambda: [1], min_length=1)
    smoothing: List[int] = Field(default_factory=lambda: [8], min_length=1)
    smoothing_rule: Optional[str] = None
    levels: List[int] = Field(default_factory=lambda: [2, 3, 4], min_length=1)
    coercivity_levels: int = Field(default=1, ge=1)
    sizes: List[int] = Field(default_factory=lambda: [8, 16, 32], min_length=1)
    solvers: List[str] = Field(default_factory=lambda: ["TL", "W3", "W4", "CG", "PCG"], min_length=1)
    C_sigma: float = Field(default=C_SIGMA, gt=0)
    target_factor: float = Field(default=TARGET_FACTOR, ge=2, le=16)
    seed: int = RNG_SEED
    tol_rel: float = Field(default=TOL_REL, gt=0)
    max_iter: int = Field(default=MAX_ITER, ge=1)
    n_jobs: int = N_JOBS
    output: str = "results"

    @field_validator("degrees")
    @classmethod
    def check_degrees(cls, value: List[int]) -> List[int]:
        if any(p < 1 or p > MAX_DEGREE for p in value):
            raise ValueError(f"degrees must lie in [1, {MAX_DEGREE}]")
        return value

    @field_validator("smoothing_rule")
    @classmethod
    def check_rule(cls, value: Optional[str]) -> Optional[str]:
        if value is not None and value != "2p2":
            raise ValueError("the only supported smoothing rule is '2p2'")
        return value

    def steps_for(self, p: int) -> List[int]:
        """Smoothing steps to run at degree p"""
        if self.smoothing_rule == "2p2":
            return [2 * p * p]
        return list(self.smoothing)


class ContractionEstimate(BaseModel):
    """Measured energy-norm contraction of one multigrid iteration"""
    levels: int
    p: int
    m: int
    contraction: float = Field(..., ge=0)
    sigma_indicator: float = 0.0
    mu: int = 0


# Command-line schema
class RunConfig(BaseModel):
    """Validated command-line arguments of the solve subcommand"""
    solver: SolverKind
    p: int = Field(default=1, ge=1, le=MAX_DEGREE)
    m1: int = Field(default=3, ge=0)
    m2: int = Field(default=3, ge=0)
    levels: Optional[int] = Field(default=None, ge=2)
    C_sigma: float = Field(default=C_SIGMA, gt=0)
    tol: float = Field(default=TOL_REL, gt=0)
    max_iter: int = Field(default=MAX_ITER, ge=1)
    seed: int = RNG_SEED

    def multigrid(self, levels: int) -> MultigridConfig:
        cycle = CycleType.TWO_LEVEL if self.solver == SolverKind.TL else CycleType.W_CYCLE
        return MultigridConfig(
            m1=self.m1, m2=self.m2, levels=levels, cycle=cycle,
            tol_rel=self.tol, max_iter=self.max_iter,
        )
