"""
zubov_clf - control Lyapunov functions from the Zubov equation

Computes control Lyapunov functions for control-affine systems in two
ways and verifies both:

Components:
    - Riccati-based quadratic CLF V_P = xᵀPx with verified levels
    - PMP boundary value solves that label states with their optimal cost
    - Physics-informed neural solution W_N of the Zubov-HJB equation
    - Interval branch-and-bound verifier and SMT-LIB2 query emission
    - Sontag / HJB / hybrid controllers and closed-loop simulation

Usage:
    zubov-clf pipeline --benchmark reversed_vdp --seed 7 --out runs/b

Or:
    python -m zubov_clf.main qclf --benchmark vdp_input
"""

__version__ = "0.1.0"

from .bench import run_pipeline
from .errors import ZubovError
from .models import PipelineReport, QuadraticCertificate, RunConfig, TransformSpec, Verdict
from .pinn import NeuralValueFunction, train
from .pmp import generate_dataset, solve_tpbvp
from .riccati import compute_certificate, solve_are
from .system import ControlAffineSystem, CostSpec, get_benchmark, list_benchmarks
from .verify import check_condition, verify_neural, verify_quadratic

__all__ = [
    # Systems
    "ControlAffineSystem",
    "CostSpec",
    "get_benchmark",
    "list_benchmarks",
    # Quadratic CLF
    "compute_certificate",
    "solve_are",
    # Neural CLF
    "generate_dataset",
    "solve_tpbvp",
    "NeuralValueFunction",
    "train",
    # Verification
    "check_condition",
    "verify_quadratic",
    "verify_neural",
    # Models
    "PipelineReport",
    "QuadraticCertificate",
    "RunConfig",
    "TransformSpec",
    "Verdict",
    # Harness
    "run_pipeline",
    "ZubovError",
]
