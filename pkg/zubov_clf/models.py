"""
Models for zubov_clf.

Pydantic models for run configuration and for every record the pipeline
writes to disk (certificates, PMP samples, verdicts, reports). Models
validate on construction so a bad config fails before any numerics run.

Validation Strategy:
    Hard invariants (positive horizons, non-negative weights, collocation
    count at least the batch size) raise ValidationError. Soft bounds on
    reported quantities (e.g. a transformed value marginally outside
    [0, 1) from round-off) are clamped and a warning is logged.
"""

from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .logging_config import get_logger
from .storage import dumps_json

logger = get_logger(__name__)


# =============================================================================
# Value transform
# =============================================================================

class TransformKind(str, Enum):
    """Shape of the map β from value V to transformed value W = β(V)."""
    KRUZKOV = "kruzkov"   # β(s) = 1 - exp(-αs)
    TANH = "tanh"         # β(s) = tanh(αs)


class TransformSpec(BaseModel):
    """
    β with β(0) = 0, strictly increasing, β → 1, and β' = (1 - β)ψ(β).

    ψ(s) = α for Kruzkov, ψ(s) = α(1 + s) for tanh.
    """
    model_config = ConfigDict(frozen=True)

    kind: TransformKind = Field(default=TransformKind.TANH)
    alpha: float = Field(default=0.1, gt=0.0, description="Scale α of the transform")

    def beta(self, V: Any) -> np.ndarray:
        V = np.asarray(V, dtype=np.float64)
        if self.kind == TransformKind.KRUZKOV:
            return -np.expm1(-self.alpha * V)
        return np.tanh(self.alpha * V)

    def psi(self, W: Any) -> np.ndarray:
        W = np.asarray(W, dtype=np.float64)
        if self.kind == TransformKind.KRUZKOV:
            return np.full_like(W, self.alpha)
        return self.alpha * (1.0 + W)

    def phi(self, W: Any) -> np.ndarray:
        """(1 - W)ψ(W), the factor relating ∇W to ∇V."""
        W = np.asarray(W, dtype=np.float64)
        if self.kind == TransformKind.KRUZKOV:
            return self.alpha * (1.0 - W)
        return self.alpha * (1.0 - W * W)

    def dphi(self, W: Any) -> np.ndarray:
        W = np.asarray(W, dtype=np.float64)
        if self.kind == TransformKind.KRUZKOV:
            return np.full_like(W, -self.alpha)
        return -2.0 * self.alpha * W

    def inverse(self, W: Any) -> np.ndarray:
        """V = β⁻¹(W) for W in [0, 1)."""
        W = np.asarray(W, dtype=np.float64)
        if self.kind == TransformKind.KRUZKOV:
            return -np.log1p(-W) / self.alpha
        return np.arctanh(W) / self.alpha


# =============================================================================
# Stage configuration
# =============================================================================

class CollocationScheme(str, Enum):
    HERMITE_SIMPSON = "hermite_simpson"
    TRAPEZOIDAL = "trapezoidal"


class PMPConfig(BaseModel):
    """Two-point boundary value solves and dataset generation."""
    T: float = Field(default=200.0, gt=0.0, description="Horizon")
    N: int = Field(default=2000, ge=10, description="Mesh points")
    tol: float = Field(default=1e-5, gt=0.0)
    n_samples: int = Field(default=3000, ge=0)
    domain: Optional[List[Tuple[float, float]]] = Field(
        default=None, description="Initial-condition box; defaults to the system's data domain"
    )
    seed: int = 0
    scheme: CollocationScheme = CollocationScheme.HERMITE_SIMPSON
    continuation: List[float] = Field(
        default_factory=list, description="Shorter horizons solved first, e.g. [20, 50]"
    )
    max_iterations: int = Field(default=40, ge=1)

    @model_validator(mode="after")
    def check_continuation(self) -> "PMPConfig":
        steps = self.continuation
        if any(t <= 0.0 for t in steps):
            raise ValueError("continuation horizons must be positive")
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError("continuation horizons must be increasing")
        if steps and steps[-1] >= self.T:
            raise ValueError("continuation horizons must be shorter than T")
        return self


class TrainConfig(BaseModel):
    """Physics-informed training of the neural value function."""
    hidden: List[int] = Field(default_factory=lambda: [30, 30])
    n_collocation: int = Field(default=300_000, ge=1)
    lambda_r: float = Field(default=1.0, ge=0.0, description="Residual weight (0 = data only)")
    lambda_d: float = Field(default=1.0, ge=0.0, description="Data weight")
    lambda_b: float = Field(default=0.0, ge=0.0, description="Boundary weight")
    n_boundary: int = Field(default=0, ge=0)
    boundary_value: float = Field(default=1.0, description="Target h of W on the domain boundary")
    epochs: int = Field(default=20, ge=1)
    batch_size: int = Field(default=32, ge=1)
    learning_rate: float = Field(default=1e-3, gt=0.0)
    seed: int = 0
    domain: Optional[List[Tuple[float, float]]] = None

    @field_validator("hidden")
    @classmethod
    def validate_hidden(cls, v: List[int]) -> List[int]:
        if not v or any(w < 1 for w in v):
            raise ValueError("hidden widths must be positive")
        return v

    @model_validator(mode="after")
    def check_sizes(self) -> "TrainConfig":
        if self.n_collocation < self.batch_size:
            raise ValueError("n_collocation must be at least batch_size")
        if self.lambda_b > 0.0 and self.n_boundary == 0:
            raise ValueError("lambda_b > 0 needs n_boundary > 0")
        return self


class VerifyBackend(str, Enum):
    NATIVE = "native"
    SMTLIB = "smtlib"


class VerifyConfig(BaseModel):
    """Branch-and-bound, bisection and SMT-LIB2 settings."""
    delta: Optional[float] = Field(default=None, gt=0.0, description="δ; defaults by dimension")
    c_max: Optional[float] = Field(default=None, gt=0.0)
    budget: int = Field(default=200_000, ge=1, description="Box limit per check")
    tolerance: float = Field(default=1e-3, gt=0.0, description="Relative bisection tolerance")
    origin_margin: float = Field(default=0.5, gt=0.0, lt=1.0)
    mean_value: bool = False
    backend: VerifyBackend = VerifyBackend.NATIVE
    smt_logic: str = "QF_NRA"
    smt_solver: Optional[str] = Field(
        default=None, description="Solver command reading SMT-LIB2 from a file argument"
    )
    smt_timeout: float = Field(default=60.0, gt=0.0)

    def delta_for(self, n: int) -> float:
        if self.delta is not None:
            return self.delta
        return 1e-4 if n <= 2 else 1e-3


class SimulateConfig(BaseModel):
    """Closed-loop simulation settings."""
    x0: List[List[float]] = Field(default_factory=list)
    T: float = Field(default=20.0, gt=0.0)
    blowup: float = Field(default=1e6, gt=0.0)
    hysteresis: float = Field(default=0.05, ge=0.0, lt=1.0)


class BenchConfig(BaseModel):
    """Figure data and ablation settings of the benchmark harness."""
    grid_resolution: int = Field(default=200, ge=2)
    area_samples: int = Field(default=200_000, ge=1)
    extrapolation_factor: float = Field(
        default=2.25, ge=1.0, description="Scale of the extrapolation box relative to the domain"
    )
    ablation: bool = Field(default=False, description="Also train the data-only variant")
    roa: bool = Field(default=True, description="Verify the closed-loop region of attraction")


class RunConfig(BaseModel):
    """
    Complete configuration of a run.

    A top-level ``seed`` (when given) is copied into the PMP and training
    seeds.
    """
    benchmark: Optional[str] = None
    system: Optional[str] = Field(default=None, description="Path to a system config file")
    transform: TransformSpec = Field(default_factory=TransformSpec)
    pmp: PMPConfig = Field(default_factory=PMPConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    verify: VerifyConfig = Field(default_factory=VerifyConfig)
    simulate: SimulateConfig = Field(default_factory=SimulateConfig)
    bench: BenchConfig = Field(default_factory=BenchConfig)
    seed: Optional[int] = None
    out: str = "runs/latest"
    threads: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def check_source(self) -> "RunConfig":
        if self.benchmark is not None and self.system is not None:
            raise ValueError("give either 'benchmark' or 'system', not both")
        if self.seed is not None:
            self.pmp.seed = self.seed
            self.train.seed = self.seed
        return self

    def canonical_json(self) -> bytes:
        return dumps_json(self)


# =============================================================================
# Records
# =============================================================================

class QuadraticCertificate(BaseModel):
    """Riccati solution, LQR gain, and verified levels of V_P = xᵀPx."""
    P: List[List[float]]
    K: List[List[float]]
    c_P1: float = Field(default=0.0, ge=0.0, description="Closed-loop Lyapunov level")
    c_P: float = Field(default=0.0, ge=0.0, description="CLF level")
    residual: float = Field(default=0.0, ge=0.0)
    global_on_domain: bool = Field(
        default=False, description="CLF condition holds on the whole domain outside {V_P < c_P1}"
    )

    @model_validator(mode="after")
    def check_levels(self) -> "QuadraticCertificate":
        if self.c_P < self.c_P1:
            raise ValueError(f"c_P={self.c_P} is below c_P1={self.c_P1}")
        return self

    @property
    def P_matrix(self) -> np.ndarray:
        return np.asarray(self.P, dtype=np.float64)

    @property
    def K_matrix(self) -> np.ndarray:
        return np.asarray(self.K, dtype=np.float64)


class PMPSample(BaseModel):
    """One boundary value solve started at x0."""
    x0: List[float]
    V0: float = Field(ge=0.0)
    W0: float
    converged: bool
    iterations: int = 0
    max_defect: float = 0.0
    boundary_residual: float = 0.0

    @field_validator("W0")
    @classmethod
    def validate_W0(cls, v: float) -> float:
        """Clamp W0 into [0, 1); out-of-range values come from round-off."""
        if v < 0.0:
            logger.warning("PMPSample.W0=%.3g is below 0.0, clamping to 0.0.", v)
            return 0.0
        if v >= 1.0:
            clamped = float(np.nextafter(1.0, 0.0))
            logger.warning("PMPSample.W0=%.17g is not below 1.0, clamping to %.17g.", v, clamped)
            return clamped
        return v


class VerdictOutcome(str, Enum):
    PROVED = "proved"
    COUNTEREXAMPLE = "counterexample"
    UNKNOWN = "unknown"


class Verdict(BaseModel):
    """Result of one verification condition."""
    condition: str
    outcome: VerdictOutcome
    delta: float
    boxes: int = 0
    time_ms: float = 0.0
    witness: Optional[List[float]] = None
    witness_box: Optional[List[List[float]]] = None
    c: Optional[float] = Field(default=None, description="Level checked, if any")
    method: str = "native"

    @property
    def proved(self) -> bool:
        return self.outcome == VerdictOutcome.PROVED


class NeuralLevels(BaseModel):
    """Verified levels of the neural CLF W_N."""
    c1: float = Field(gt=0.0, lt=1.0)
    c2: Optional[float] = None
    c_max: float

    @model_validator(mode="after")
    def check_order(self) -> "NeuralLevels":
        if self.c2 is not None and self.c2 <= self.c1:
            raise ValueError("c2 must exceed c1")
        return self


class PipelineReport(BaseModel):
    """Summary of one end-to-end run."""
    benchmark: str
    certificate: Dict[str, Any] = Field(default_factory=dict)
    dataset: Dict[str, Any] = Field(default_factory=dict)
    training: Dict[str, Any] = Field(default_factory=dict)
    verification: Dict[str, Any] = Field(default_factory=dict)
    costs: List[Dict[str, Any]] = Field(default_factory=list)
    areas: Dict[str, float] = Field(default_factory=dict)
    ablation: Dict[str, Any] = Field(default_factory=dict)
    runtimes: Dict[str, float] = Field(default_factory=dict)
