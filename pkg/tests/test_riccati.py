"""
Test Suite: Riccati Equation and Quadratic Certificates

PURPOSE: Validate the stabilizing ARE solution and the LQR gain
COVERAGE: zubov_clf/riccati.py

Tests cover:
- Scalar closed-form solutions
- Residual and Hurwitz checks on every benchmark
- Errors for non-stabilizable pairs and invalid R
- Rejection of solutions with a large residual
"""

import math

import numpy as np
import pytest

from zubov_clf import riccati
from zubov_clf.errors import CertificateRejectedError, RiccatiError
from zubov_clf.riccati import (
    compute_certificate,
    is_hurwitz,
    lqr_gain,
    riccati_residual,
    solve_are,
)
from zubov_clf.system import get_benchmark, linearize


class TestScalarRiccati:
    """Closed-form scalar cases."""

    def test_integrator(self):
        """A = 0, B = Q = R = 1 gives P = 1 and K = -1."""
        P = solve_are([[0.0]], [[1.0]], [[1.0]], [[1.0]])
        assert P[0, 0] == pytest.approx(1.0, abs=1e-12)
        assert lqr_gain(P, [[1.0]], [[1.0]])[0, 0] == pytest.approx(-1.0, abs=1e-12)

    def test_unstable_scalar(self):
        """A = 1 gives P = 1 + √2 and closed loop -√2."""
        P = solve_are([[1.0]], [[1.0]], [[1.0]], [[1.0]])
        assert P[0, 0] == pytest.approx(1.0 + math.sqrt(2.0), abs=1e-12)
        K = lqr_gain(P, [[1.0]], [[1.0]])
        assert K[0, 0] == pytest.approx(-(1.0 + math.sqrt(2.0)), abs=1e-12)
        assert (1.0 + K[0, 0]) == pytest.approx(-math.sqrt(2.0), abs=1e-12)

    def test_stable_without_input_or_cost(self):
        """A Hurwitz, B = 0, Q = 0 gives P = 0."""
        P = solve_are([[-1.0]], [[0.0]], [[0.0]], [[1.0]])
        assert P[0, 0] == pytest.approx(0.0, abs=1e-12)

    def test_zero_input_gain(self):
        """B = 0 gives K = 0."""
        K = lqr_gain(np.eye(2), np.zeros((2, 1)), np.eye(1))
        assert np.array_equal(K, np.zeros((1, 2)))


class TestRiccatiErrors:
    """Invalid problems."""

    def test_not_stabilizable(self):
        """An unstable mode the input cannot reach."""
        with pytest.raises(RiccatiError):
            solve_are([[1.0]], [[0.0]], [[1.0]], [[1.0]])

    def test_R_not_positive_definite(self):
        """R must be positive definite."""
        with pytest.raises(RiccatiError):
            solve_are([[0.0]], [[1.0]], [[1.0]], [[-1.0]])

    def test_R_ill_conditioned(self):
        """Condition numbers beyond 1e12 are rejected."""
        with pytest.raises(RiccatiError):
            solve_are(np.zeros((2, 2)), np.eye(2), np.eye(2), np.diag([1.0, 1e-14]))

    def test_shape_mismatch(self):
        """R must be k×k."""
        with pytest.raises(RiccatiError):
            solve_are([[0.0]], [[1.0]], [[1.0]], np.eye(2))

    def test_singular_R_gain(self):
        """lqr_gain with singular R."""
        with pytest.raises(RiccatiError):
            lqr_gain(np.eye(1), np.eye(1), np.zeros((1, 1)))


class TestCertificates:
    """compute_certificate on the benchmarks."""

    @pytest.mark.parametrize("name", ["vdp_input", "mass_spring_4d", "pendulum", "reversed_vdp",
                                      "mass_spring_chain(6)"])
    def test_residual_and_stability(self, name):
        """Residual below 1e-8, P positive definite, A + BK Hurwitz."""
        sys, cost = get_benchmark(name)
        cert = compute_certificate(sys, cost)
        A, B = linearize(sys)
        P, K = cert.P_matrix, cert.K_matrix
        assert riccati_residual(P, A, B, cost.Q, np.eye(sys.k)) <= 1e-8
        assert np.min(np.linalg.eigvalsh(P)) > 0.0
        assert is_hurwitz(A + B @ K)
        assert cert.c_P == 0.0 and cert.c_P1 == 0.0

    def test_reversed_vdp_gain_is_zero(self):
        """g(0) = 0 makes the LQR gain vanish."""
        cert = compute_certificate(*get_benchmark("reversed_vdp"))
        assert np.allclose(cert.K_matrix, 0.0)

    def test_large_residual_rejected(self, monkeypatch):
        """A solution missing the ARE by more than 1e-8 gives no certificate."""
        sys, cost = get_benchmark("vdp_input")
        exact = solve_are(*linearize(sys), cost.Q, np.eye(sys.k))
        monkeypatch.setattr(riccati, "solve_are", lambda *args, **kwargs: exact + 1e-6 * np.eye(sys.n))
        with pytest.raises(CertificateRejectedError, match="residual"):
            compute_certificate(sys, cost)
