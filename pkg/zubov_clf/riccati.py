"""
Continuous-time algebraic Riccati equation and the quadratic CLF V_P = xᵀPx.

The stabilizing solution comes from the stable invariant subspace of the
Hamiltonian matrix (ordered real Schur form), polished by Newton steps
on the Riccati residual (each step one Lyapunov solve).
"""

from typing import Tuple

import numpy as np
from scipy import linalg

from .errors import CertificateRejectedError, RiccatiError
from .logging_config import get_logger
from .models import QuadraticCertificate
from .system import ControlAffineSystem, CostSpec, linearize

logger = get_logger(__name__)

MAX_R_CONDITION = 1e12
RESIDUAL_TOLERANCE = 1e-8
NEWTON_STEPS = 5


def _as_matrices(A, B, Q, R) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.asarray(B, dtype=np.float64)
    B = B.reshape(A.shape[0], -1) if B.ndim < 2 else B
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    n = A.shape[0]
    if A.shape != (n, n) or Q.shape != (n, n) or B.shape[0] != n:
        raise RiccatiError(f"inconsistent shapes A{A.shape}, B{B.shape}, Q{Q.shape}")
    if R.shape != (B.shape[1], B.shape[1]):
        raise RiccatiError(f"R has shape {R.shape}, expected {(B.shape[1], B.shape[1])}")
    return A, B, Q, R


def _check_R(R: np.ndarray) -> None:
    if not np.allclose(R, R.T, atol=1e-12):
        raise RiccatiError("R must be symmetric")
    eigenvalues = np.linalg.eigvalsh(0.5 * (R + R.T))
    if eigenvalues[0] <= 0.0:
        raise RiccatiError("R must be positive definite")
    if eigenvalues[-1] / eigenvalues[0] > MAX_R_CONDITION:
        raise RiccatiError(f"R is ill-conditioned (condition number {eigenvalues[-1] / eigenvalues[0]:.3g})")


def riccati_residual(P: np.ndarray, A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray) -> float:
    """Frobenius norm of PA + AᵀP − PBR⁻¹BᵀP + Q."""
    A, B, Q, R = _as_matrices(A, B, Q, R)
    P = np.atleast_2d(np.asarray(P, dtype=np.float64))
    residual = P @ A + A.T @ P - P @ B @ np.linalg.solve(R, B.T @ P) + Q
    return float(np.linalg.norm(residual, "fro"))


def is_hurwitz(M: np.ndarray) -> bool:
    return bool(np.all(np.linalg.eigvals(np.atleast_2d(M)).real < 0.0))


def lqr_gain(P: np.ndarray, B: np.ndarray, R: np.ndarray) -> np.ndarray:
    """
    K = −R⁻¹BᵀP.

    Raises:
        RiccatiError: R singular
    """
    P = np.atleast_2d(np.asarray(P, dtype=np.float64))
    B = np.asarray(B, dtype=np.float64)
    B = B.reshape(P.shape[0], -1) if B.ndim < 2 else B
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    try:
        return -np.linalg.solve(R, B.T @ P)
    except np.linalg.LinAlgError as e:
        raise RiccatiError(f"R is singular: {e}") from e


def _newton_refine(P: np.ndarray, A, B, Q, R, steps: int) -> np.ndarray:
    best = P
    best_residual = riccati_residual(P, A, B, Q, R)
    for step in range(steps):
        if best_residual == 0.0:
            break
        K = lqr_gain(best, B, R)
        closed = A + B @ K
        if not is_hurwitz(closed):
            logger.debug("Newton refinement stopped: closed loop not Hurwitz at step %d", step)
            break
        # (A+BK)ᵀX + X(A+BK) = −(Q + KᵀRK)
        candidate = linalg.solve_continuous_lyapunov(closed.T, -(Q + K.T @ R @ K))
        candidate = 0.5 * (candidate + candidate.T)
        residual = riccati_residual(candidate, A, B, Q, R)
        logger.debug("Newton step %d: residual %.3e", step, residual)
        if not residual < best_residual:
            break
        best, best_residual = candidate, residual
    return best


def solve_are(A, B, Q, R, refine_steps: int = NEWTON_STEPS) -> np.ndarray:
    """
    Stabilizing solution of PA + AᵀP − PBR⁻¹BᵀP + Q = 0.

    Raises:
        RiccatiError: (A, B) not stabilizable or (A, Q) not detectable (no
            stable invariant subspace of dimension n with invertible top
            block), or R not symmetric positive definite / ill-conditioned
    """
    A, B, Q, R = _as_matrices(A, B, Q, R)
    _check_R(R)
    n = A.shape[0]
    S = B @ np.linalg.solve(R, B.T)
    H = np.block([[A, -S], [-Q, -A.T]])

    # Real Schur form with the open left half-plane eigenvalues leading
    _, U, sdim = linalg.schur(H, output="real", sort="lhp")
    if sdim != n:
        raise RiccatiError(
            f"Hamiltonian has {sdim} stable eigenvalues, expected {n}; "
            "the pair (A, B) is not stabilizable or (A, Q) is not detectable"
        )
    U11 = U[:n, :n]
    U21 = U[n:, :n]
    if np.linalg.cond(U11) > 1.0 / np.finfo(np.float64).eps:
        raise RiccatiError("stable subspace is not a graph over the state space (not stabilizable)")
    P = np.linalg.solve(U11.T, U21.T).T
    P = 0.5 * (P + P.T)
    P = _newton_refine(P, A, B, Q, R, refine_steps)

    residual = riccati_residual(P, A, B, Q, R)
    if residual > RESIDUAL_TOLERANCE:
        logger.warning("Riccati residual %.3e exceeds %.0e", residual, RESIDUAL_TOLERANCE)
    return P


def compute_certificate(sys: ControlAffineSystem, cost: CostSpec) -> QuadraticCertificate:
    """
    Linearize, solve the ARE and build the (not yet verified) certificate.

    R must be constant at the origin; R(0) is used for the linear problem.

    Raises:
        RiccatiError: no stabilizing solution, or A + BK not Hurwitz
        CertificateRejectedError: the ARE residual exceeds RESIDUAL_TOLERANCE
    """
    A, B = linearize(sys)
    R0 = cost.R_matrix(np.zeros(sys.n))
    P = solve_are(A, B, cost.Q, R0)
    K = lqr_gain(P, B, R0)
    if not is_hurwitz(A + B @ K):
        raise RiccatiError("closed-loop matrix A + BK is not Hurwitz")
    if np.min(np.linalg.eigvalsh(P)) <= 0.0:
        raise RiccatiError("Riccati solution is not positive definite; check that Q is positive definite")
    residual = riccati_residual(P, A, B, cost.Q, R0)
    if not residual <= RESIDUAL_TOLERANCE:
        raise CertificateRejectedError(
            f"Riccati residual {residual:.3e} for {sys.name} exceeds {RESIDUAL_TOLERANCE:.0e}"
        )
    logger.info("Riccati solution for %s: residual %.2e, λmin(P) = %.4g",
                sys.name, residual, float(np.min(np.linalg.eigvalsh(P))))
    return QuadraticCertificate(P=P.tolist(), K=K.tolist(), residual=residual)
