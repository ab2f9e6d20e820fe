import math
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class ProblemVariant(str, Enum):
    PURE_SECOND_ORDER = "PureSecondOrder"
    ADVECTIVE = "Advective"
    STRONG_DAMPING = "StrongDamping"
    ACOUSTIC = "Acoustic"


class DofLayout(str, Enum):
    TRACE_COUPLED = "TraceCoupled"
    ACOUSTIC_BLOCK = "AcousticBlock"


class CurveKind(str, Enum):
    UNIT_CIRCLE = "unit-circle"
    PARAMETRIZED = "parametrized"
    POLYGONAL = "polygonal"


class LoadRule(str, Enum):
    INTERPOLATED = "interpolated"
    QUADRATURE = "quadrature"


class NormKind(str, Enum):
    MH = "Mh"
    AH = "Ah"
    DUAL_AH = "DualAh"
    S = "S"


class ErrorMetric(str, Enum):
    NODAL_DISCRETE = "NodalDiscrete"
    LIFTED_QUADRATURE = "LiftedQuadrature"


class SolverMode(str, Enum):
    DIRECT = "direct"
    ITERATIVE_SPD = "iterative-spd"
    ITERATIVE_GENERAL = "iterative-general"


class ComparisonMode(str, Enum):
    EXACT = "exact"
    REFERENCE = "reference"


class StudyKind(str, Enum):
    SPATIAL = "spatial"
    TEMPORAL = "temporal"


class ViolationType(str, Enum):
    NEGATIVE_AREA = "negative_area"
    OFF_CURVE = "off_curve"
    NON_CONFORMING = "non_conforming"
    MULTIPLE_BOUNDARY_EDGES = "multiple_boundary_edges"
    BOUNDARY_FLAG = "boundary_flag"


class MeshViolation(BaseModel):
    type: ViolationType
    index: int
    description: str


class ErrorReport(BaseModel):
    """Errors of one discrete solution at time t, split into bulk and surface parts"""

    err_l2_bulk: float
    err_l2_surf: float
    err_h1_bulk: Optional[float] = None
    err_h1_surf: Optional[float] = None
    metric: ErrorMetric = ErrorMetric.NODAL_DISCRETE
    level: Optional[int] = None
    t: float = 0.0
    surface_weight: float = 1.0  # mu (or mu_Gamma for acoustic problems)

    @model_validator(mode="after")
    def _check_entries(self) -> "ErrorReport":
        for name in ("err_l2_bulk", "err_l2_surf", "err_h1_bulk", "err_h1_surf"):
            value = getattr(self, name)
            if value is None:
                continue
            if not math.isfinite(value) or value < 0.0:
                raise ValueError(f"{name} must be finite and non-negative, got {value}")
        return self

    @property
    def combined_l2(self) -> float:
        return math.sqrt(self.err_l2_bulk ** 2 + self.surface_weight * self.err_l2_surf ** 2)

    def as_row(self) -> Dict[str, Any]:
        return {
            "err_l2_bulk": self.err_l2_bulk,
            "err_l2_surf": self.err_l2_surf,
            "err_h1_bulk": math.nan if self.err_h1_bulk is None else self.err_h1_bulk,
            "err_h1_surf": math.nan if self.err_h1_surf is None else self.err_h1_surf,
            "surface_weight": self.surface_weight,
            "metric": self.metric.value,
            "t": self.t,
        }


class RunRecord(BaseModel):
    scenario: str
    level: int
    h: float
    tau: float
    n_dofs: int
    wall_seconds: float = 0.0
    errors: Optional[ErrorReport] = None
    energy_drift: float = 0.0


class ConvergenceTable(BaseModel):
    kind: StudyKind
    scenario: str
    rows: List[RunRecord] = []
    eoc: List[float] = []

    @model_validator(mode="after")
    def _check_rows(self) -> "ConvergenceTable":
        if self.rows and len(self.eoc) != len(self.rows) - 1:
            raise ValueError(f"expected {len(self.rows) - 1} EOC values, got {len(self.eoc)}")
        key = "h" if self.kind == StudyKind.SPATIAL else "tau"
        values = [getattr(row, key) for row in self.rows]
        if any(b >= a for a, b in zip(values, values[1:])):
            raise ValueError(f"{key} must be strictly decreasing across rows: {values}")
        return self


class SolverSettings(BaseModel):
    mode: SolverMode = SolverMode.DIRECT
    norm_mode: SolverMode = SolverMode.ITERATIVE_SPD
    tol: float = Field(default=1e-12, gt=0.0)
    max_iter: int = Field(default=20000, gt=0)
    ordering: str = "NATURAL"

    @field_validator("ordering")
    @classmethod
    def _check_ordering(cls, value: str) -> str:
        value = value.upper()
        if value not in ("NATURAL", "COLAMD", "MMD_ATA", "MMD_AT_PLUS_A"):
            raise ValueError(f"unknown column ordering '{value}'")
        return value


class StepperConfig(BaseModel):
    tau: float = Field(gt=0.0)
    T: float = Field(gt=0.0)
    tol: float = 1e-12
    energy_observer: bool = False
    checkpoints: List[float] = []

    @model_validator(mode="after")
    def _check_step_count(self) -> "StepperConfig":
        steps = round(self.T / self.tau)
        if steps < 1 or abs(steps * self.tau - self.T) > 1e-12:
            raise ValueError(f"T = {self.T} is not an integer multiple of tau = {self.tau}")
        return self

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.tau))


class StudyConfig(BaseModel):
    scenario: str
    overrides: Dict[str, float] = {}
    seed: Optional[int] = Field(default=None, ge=4)
    levels: Tuple[int, int] = (2, 5)
    level: int = Field(default=3, ge=0)
    tau0: Optional[float] = None
    halvings: int = Field(default=4, ge=1)
    taus: Optional[List[float]] = None
    T: Optional[float] = None
    rk_stages: int = Field(default=1, ge=1)
    norms: List[str] = ["err_l2_bulk", "err_l2_surf", "err_h1_bulk", "err_h1_surf"]
    comparison: Optional[ComparisonMode] = None
    reference_gap: int = Field(default=2, ge=1)
    metric: ErrorMetric = ErrorMetric.NODAL_DISCRETE
    solver: SolverSettings = SolverSettings()
    output_dir: str = "./results"
    record_wall_time: bool = True
    energy_observer: bool = False
    max_workers: int = Field(default=1, ge=1)

    @field_validator("levels")
    @classmethod
    def _check_levels(cls, value: Tuple[int, int]) -> Tuple[int, int]:
        first, last = value
        if first < 0 or last < first:
            raise ValueError(f"invalid level range {first}..{last}")
        return value

    @field_validator("norms")
    @classmethod
    def _check_norms(cls, value: List[str]) -> List[str]:
        allowed = {"err_l2_bulk", "err_l2_surf", "err_h1_bulk", "err_h1_surf"}
        unknown = [name for name in value if name not in allowed]
        if unknown:
            raise ValueError(f"unknown norms {unknown}")
        return value


class StepResult(BaseModel):
    """Outcome of one timed workflow step"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    step_name: str
    success: bool
    output: Any = None
    error_message: Optional[str] = None
    exception: Optional[Exception] = None
    execution_time: float
