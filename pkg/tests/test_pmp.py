"""
Test Suite: PMP Boundary Value Problems

PURPOSE: Validate the collocation solver and dataset generation
COVERAGE: zubov_clf/pmp.py

Tests cover:
- The β transform
- Scalar and linear problems with closed-form value functions
- Argument validation
- Seeded, thread-independent dataset generation
- Dataset files
"""

import math

import numpy as np
import pytest

from zubov_clf.errors import TPBVPError, TransformError
from zubov_clf.interval import Box
from zubov_clf.models import TransformKind, TransformSpec
from zubov_clf.pmp import PMPDataset, beta_transform, generate_dataset, solve_tpbvp
from zubov_clf.riccati import solve_are
from zubov_clf.system import quadratic_cost


# ============================================================================
# Transform
# ============================================================================

class TestBetaTransform:
    """W = β(V)."""

    def test_kruzkov(self):
        """1 - exp(-0.1·10)."""
        assert beta_transform(10.0, TransformSpec(kind=TransformKind.KRUZKOV)) == pytest.approx(0.632121, abs=1e-6)

    def test_tanh(self):
        """tanh(0.1·10)."""
        assert beta_transform(10.0, TransformSpec(kind=TransformKind.TANH)) == pytest.approx(0.761594, abs=1e-6)

    def test_zero(self):
        """β(0) = 0 for both kinds."""
        for kind in TransformKind:
            assert beta_transform(0.0, TransformSpec(kind=kind)) == 0.0

    def test_array_and_inverse(self):
        """Elementwise on arrays; inverse undoes it."""
        spec = TransformSpec()
        V = np.array([0.0, 1.0, 50.0])
        W = beta_transform(V, spec)
        assert W.shape == (3,) and np.all(np.diff(W) > 0.0)
        assert np.allclose(spec.inverse(W), V)

    def test_negative_value(self):
        """V < 0 is outside the domain of β."""
        with pytest.raises(TransformError):
            beta_transform(-1.0, TransformSpec())


# ============================================================================
# Solver
# ============================================================================

class TestSolveTPBVP:
    """Collocation on problems with known solutions."""

    def test_scalar_integrator(self, integrator, unit_cost):
        """ẋ = u, q = x², R = 1 from x0 = 1: V(0) = tanh(T), λ(0) = 2 tanh(T)."""
        solution = solve_tpbvp(integrator, unit_cost, [1.0], T=20.0, N=2000, tol=1e-9)
        assert solution.converged
        assert solution.V0 == pytest.approx(1.0, abs=1e-4)
        assert solution.lam[0, 0] == pytest.approx(2.0, abs=1e-3)
        assert solution.u[0, 0] == pytest.approx(-1.0, abs=1e-3)
        assert solution.x[-1, 0] == pytest.approx(0.0, abs=1e-6)

    def test_trapezoidal_scheme(self, integrator, unit_cost):
        """The lower-order scheme agrees to its accuracy."""
        solution = solve_tpbvp(integrator, unit_cost, [1.0], T=20.0, N=2000, tol=1e-9,
                               scheme="trapezoidal")
        assert solution.converged
        assert solution.V0 == pytest.approx(1.0, abs=1e-3)

    def test_accumulated_cost_matches_V0(self, integrator, unit_cost):
        """Quadrature of the running cost equals V(0)."""
        solution = solve_tpbvp(integrator, unit_cost, [0.5], T=20.0, N=1000, tol=1e-9)
        assert solution.accumulated_cost() == pytest.approx(solution.V0, rel=1e-4)

    def test_linear_quadratic(self, linear_2d):
        """Long horizons reproduce x0ᵀPx0 from the Riccati equation."""
        cost = quadratic_cost(np.eye(2), np.eye(1))
        P = solve_are([[0.0, 1.0], [-1.0, -0.5]], [[0.0], [1.0]], np.eye(2), np.eye(1))
        x0 = np.array([0.8, -0.4])
        solution = solve_tpbvp(linear_2d, cost, x0, T=30.0, N=1500, tol=1e-9)
        assert solution.converged
        assert solution.V0 == pytest.approx(float(x0 @ P @ x0), rel=1e-4)

    def test_value_decreases(self, integrator, unit_cost):
        """V is non-increasing along the optimal trajectory."""
        solution = solve_tpbvp(integrator, unit_cost, [-1.5], T=10.0, N=500, tol=1e-9)
        assert np.all(np.diff(solution.V) <= 1e-9)
        assert solution.V[-1] == pytest.approx(0.0, abs=1e-9)

    def test_origin(self, integrator, unit_cost):
        """x0 = 0 has zero cost."""
        solution = solve_tpbvp(integrator, unit_cost, [0.0], T=5.0, N=50, tol=1e-9)
        assert solution.converged
        assert solution.V0 == pytest.approx(0.0, abs=1e-12)

    def test_continuation(self, integrator, unit_cost):
        """Continuation horizons end at the same solution."""
        direct = solve_tpbvp(integrator, unit_cost, [1.0], T=20.0, N=400, tol=1e-9)
        staged = solve_tpbvp(integrator, unit_cost, [1.0], T=20.0, N=400, tol=1e-9,
                             continuation=[2.0, 8.0])
        assert staged.converged
        assert staged.V0 == pytest.approx(direct.V0, abs=1e-8)

    @pytest.mark.parametrize("kwargs", [
        {"T": 0.0, "N": 100, "tol": 1e-8},
        {"T": 1.0, "N": 5, "tol": 1e-8},
        {"T": 1.0, "N": 100, "tol": 0.0},
    ])
    def test_invalid_arguments(self, integrator, unit_cost, kwargs):
        """Non-positive T or tol, or fewer than 10 mesh points."""
        with pytest.raises(TPBVPError):
            solve_tpbvp(integrator, unit_cost, [1.0], **kwargs)

    def test_wrong_x0_shape(self, integrator, unit_cost):
        """x0 must have n entries."""
        with pytest.raises(TPBVPError):
            solve_tpbvp(integrator, unit_cost, [1.0, 2.0], T=1.0, N=20, tol=1e-8)


# ============================================================================
# Dataset
# ============================================================================

class TestGenerateDataset:
    """Sampling, determinism and files."""

    SETTINGS = {"T": 10.0, "N": 200, "tol": 1e-8}

    def test_empty(self, integrator, unit_cost):
        """n_samples = 0 gives an empty dataset."""
        dataset = generate_dataset(integrator, unit_cost, 0, **self.SETTINGS)
        assert len(dataset) == 0
        assert dataset.X.shape == (0, 1)
        assert dataset.stats()["success_fraction"] == 0.0

    def test_samples_match_closed_form(self, integrator, unit_cost):
        """V(x0) ≈ tanh(T)·x0² and W = β(V)."""
        spec = TransformSpec()
        dataset = generate_dataset(integrator, unit_cost, 6, seed=3, transform=spec, threads=2,
                                   **self.SETTINGS)
        assert dataset.success_count == 6
        expected = math.tanh(10.0) * dataset.X[:, 0] ** 2
        assert np.allclose(dataset.V, expected, rtol=1e-3, atol=1e-6)
        assert np.allclose(dataset.W, spec.beta(dataset.V))
        assert np.all(np.abs(dataset.X) <= 2.0)

    def test_saturated_samples_dropped(self, integrator, unit_cost):
        """States whose β(V) rounds to 1 are not stored."""
        spec = TransformSpec(alpha=100.0)
        dataset = generate_dataset(integrator, unit_cost, 6, seed=3, transform=spec, threads=1,
                                   **self.SETTINGS)
        # tanh(100·V) is exactly 1 once |x0| > 0.44
        assert dataset.success_count < 6
        assert np.all(dataset.W < 1.0)
        assert np.array_equal(dataset.W, spec.beta(dataset.V))
        assert np.all(np.abs(dataset.X) < 0.45)

    def test_thread_count_does_not_matter(self, integrator, unit_cost):
        """Same seed, different thread counts, identical samples."""
        one = generate_dataset(integrator, unit_cost, 5, seed=11, threads=1, **self.SETTINGS)
        four = generate_dataset(integrator, unit_cost, 5, seed=11, threads=4, **self.SETTINGS)
        assert np.array_equal(one.X, four.X)
        assert np.array_equal(one.V, four.V)

    def test_seed_changes_samples(self, integrator, unit_cost):
        """Different seeds draw different initial states."""
        a = generate_dataset(integrator, unit_cost, 3, seed=1, threads=1, **self.SETTINGS)
        b = generate_dataset(integrator, unit_cost, 3, seed=2, threads=1, **self.SETTINGS)
        assert not np.array_equal(a.X, b.X)

    def test_domain_outside_system(self, integrator, unit_cost):
        """The sampling box must lie inside the system domain."""
        with pytest.raises(TPBVPError):
            generate_dataset(integrator, unit_cost, 1, domain=Box.cube(1, 3.0), **self.SETTINGS)

    def test_save_and_load(self, integrator, unit_cost, tmp_path):
        """JSON lines plus a metadata sidecar."""
        dataset = generate_dataset(integrator, unit_cost, 3, seed=5, threads=1, **self.SETTINGS)
        path = dataset.save(tmp_path / "dataset.jsonl")
        assert (tmp_path / "dataset.meta.json").exists()
        loaded = PMPDataset.load(path)
        assert np.allclose(loaded.X, dataset.X)
        assert np.allclose(loaded.W, dataset.W)
        assert loaded.attempted == 3
        assert loaded.config["system"] == integrator.name
