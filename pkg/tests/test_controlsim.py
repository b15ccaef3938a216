"""
Test Suite: Controllers and Closed-Loop Simulation

PURPOSE: Validate controller formulas and cost-accumulating simulation
COVERAGE: zubov_clf/controlsim.py

Tests cover:
- Sontag's universal formula and the HJB feedback
- Controller construction by kind
- Accumulated cost on problems with closed-form answers
- Blow-up detection
- Hysteresis switching of the hybrid controller
- Sontag decrease identity and monotone accumulated cost on Riccati V_P
"""

import math

import numpy as np
import pytest

from zubov_clf.controlsim import (
    HybridController,
    SontagController,
    compare_costs,
    cost_label,
    hjb_control,
    make_controller,
    simulate,
    simulate_batch,
    sontag_control,
)
from zubov_clf.errors import SimulationError
from zubov_clf.expr import quadratic_form
from zubov_clf.levelfn import ExpressionFunction, HJBFeedback, LinearFeedback
from zubov_clf.models import QuadraticCertificate, TransformSpec
from zubov_clf.riccati import compute_certificate
from zubov_clf.system import get_benchmark, quadratic_cost


class TestSontag:
    """u = −((a + √(a² + ‖b‖⁴)) / ‖b‖²)·b."""

    @pytest.mark.parametrize("a,b,expected", [
        (0.0, 1.0, -1.0),
        (1.0, 1.0, -(1.0 + math.sqrt(2.0))),
        (1.0, 0.0, 0.0),
        (-1.0, 2.0, -((-1.0 + math.sqrt(17.0)) / 4.0) * 2.0),
    ])
    def test_formula(self, a, b, expected):
        """Scalar cases."""
        assert sontag_control(a, [b])[0] == pytest.approx(expected)

    def test_batch(self):
        """(m,) and (m, k) inputs."""
        u = sontag_control(np.array([0.0, 1.0]), np.array([[1.0, 0.0], [0.0, 0.0]]))
        assert u.shape == (2, 2)
        assert np.allclose(u, [[-1.0, 0.0], [0.0, 0.0]])

    def test_controller_on_integrator(self, integrator):
        """With V = x² on ẋ = u: a = 0, b = 2x, u = −2|x|·sign(x)."""
        controller = SontagController(ExpressionFunction.quadratic(np.eye(1)), integrator)
        assert controller.evaluate(np.array([0.5]))[0] == pytest.approx(-1.0)
        assert controller.evaluate(np.array([0.0]))[0] == 0.0


class TestHJBControl:
    """k = −R⁻¹gᵀ∇W / (2φ(W))."""

    def test_exact_value_gives_optimal_feedback(self, integrator, unit_cost):
        """For ẋ = u, q = x² the exact W yields u = −x."""
        spec = TransformSpec(alpha=0.1)
        W = ExpressionFunction.transformed(quadratic_form(np.eye(1)), 1, spec)
        X = np.linspace(-1.5, 1.5, 7)[:, None]
        assert np.allclose(hjb_control(W, integrator, unit_cost, X, transform=spec), -X, atol=1e-9)

    def test_zero_shift(self, tiny_net):
        """With the shift the control vanishes at the origin."""
        sys, cost = get_benchmark("vdp_input")
        assert np.allclose(hjb_control(tiny_net, sys, cost, np.zeros((1, 2))), 0.0)


class TestMakeController:
    """Construction by kind."""

    CERT = QuadraticCertificate(P=[[1.0, 0.0], [0.0, 1.0]], K=[[-1.0, -1.0]], c_P1=0.5, c_P=1.0)

    def test_kinds(self, tiny_net):
        """Every kind builds the expected controller."""
        sys, cost = get_benchmark("vdp_input")
        assert isinstance(make_controller("lqr", sys, cost, cert=self.CERT), LinearFeedback)
        assert isinstance(make_controller("sontag", sys, cost, cert=self.CERT), SontagController)
        assert isinstance(make_controller("neural_hjb", sys, cost, net=tiny_net), HJBFeedback)
        hybrid = make_controller("hybrid", sys, cost, cert=self.CERT, net=tiny_net)
        assert isinstance(hybrid, HybridController) and hybrid.level == 1.0

    def test_missing_inputs(self):
        """Kinds needing a certificate or a network say so."""
        sys, cost = get_benchmark("vdp_input")
        with pytest.raises(SimulationError):
            make_controller("lqr", sys, cost)
        with pytest.raises(SimulationError):
            make_controller("neural_hjb", sys, cost, cert=self.CERT)
        with pytest.raises(SimulationError):
            make_controller("bang_bang", sys, cost, cert=self.CERT)

    def test_cost_labels(self):
        """The neural HJB feedback is reported as hjb; other kinds keep their name."""
        assert cost_label("neural_hjb") == "hjb"
        assert cost_label("sontag") == "sontag"
        assert cost_label("hybrid") == "hybrid"

    def test_hysteresis_range(self):
        """Hysteresis must lie in [0, 1)."""
        V = ExpressionFunction.quadratic(np.eye(1))
        with pytest.raises(SimulationError):
            HybridController(LinearFeedback([[-1.0]]), LinearFeedback([[-1.0]]), V, 1.0, hysteresis=1.0)


class TestSimulate:
    """Closed-loop integration."""

    def test_optimal_scalar_cost(self, integrator, unit_cost):
        """u = −x from x0 = 1 accumulates J(20) = 1 − e⁻⁴⁰."""
        trajectory = simulate(integrator, unit_cost, LinearFeedback([[-1.0]]), [1.0], T=20.0)
        assert trajectory.final_cost == pytest.approx(1.0, abs=1e-4)
        assert abs(trajectory.final_state[0]) <= 1e-6
        assert trajectory.t[-1] == pytest.approx(20.0)
        assert np.allclose(trajectory.u[:, 0], -trajectory.x[:, 0])

    def test_origin(self, integrator, unit_cost):
        """x0 = 0 stays put at zero cost."""
        trajectory = simulate(integrator, unit_cost, LinearFeedback([[-1.0]]), [0.0], T=5.0)
        assert trajectory.final_cost == 0.0
        assert not trajectory.blew_up

    def test_blowup(self, integrator, unit_cost):
        """Leaving the blow-up ball stops the run."""
        trajectory = simulate(integrator, unit_cost, LinearFeedback([[1.0]]), [1.0], T=20.0, blowup=10.0)
        assert trajectory.blew_up
        assert trajectory.t[-1] < math.log(10.0) + 1e-6

    def test_hybrid_switches_once(self, integrator, unit_cost):
        """The inner controller takes over at (1 − h)·level and keeps control."""
        V = ExpressionFunction.quadratic(np.eye(1))
        hybrid = HybridController(LinearFeedback([[-0.5]]), LinearFeedback([[-2.0]]), V, level=0.25,
                                  hysteresis=0.05)
        trajectory = simulate(integrator, unit_cost, hybrid, [1.0], T=10.0)
        assert len(trajectory.switches) == 1
        assert trajectory.switches[0] == pytest.approx(-math.log(0.2375), rel=1e-5)

    def test_invalid_arguments(self, integrator, unit_cost):
        """T ≤ 0 or a wrong-sized x0."""
        with pytest.raises(SimulationError):
            simulate(integrator, unit_cost, LinearFeedback([[-1.0]]), [1.0], T=0.0)
        with pytest.raises(SimulationError):
            simulate(integrator, unit_cost, LinearFeedback([[-1.0]]), [1.0, 2.0], T=1.0)

    def test_csv(self, integrator, unit_cost, tmp_path):
        """Columns t, x, u, J."""
        trajectory = simulate(integrator, unit_cost, LinearFeedback([[-1.0]]), [1.0], T=1.0, points=11)
        path = trajectory.write_csv(tmp_path / "traj.csv")
        lines = path.read_text(encoding="utf-8").strip().splitlines()
        assert lines[0] == "t,x1,u1,J"
        assert len(lines) == 12

    def test_batch_and_compare(self, integrator, unit_cost):
        """Batches keep input order; comparisons report J per controller."""
        controllers = {"slow": LinearFeedback([[-0.5]]), "optimal": LinearFeedback([[-1.0]])}
        batch = simulate_batch(integrator, unit_cost, controllers["optimal"], [[1.0], [-0.5]], T=10.0, threads=2)
        assert batch[0].x[0, 0] == 1.0 and batch[1].x[0, 0] == -0.5
        result = compare_costs(integrator, unit_cost, controllers, [1.0], T=20.0)
        assert result["J_optimal"] < result["J_slow"]
        assert set(result["trajectories"]) == {"slow", "optimal"}


class TestClosedLoopProperties:
    """Properties of Sontag closed loops built from the Riccati V_P."""

    @pytest.fixture(params=["vdp_input", "linear_2d"])
    def system_and_certificate(self, request, linear_2d):
        """A nonlinear and a linear planar system with their Riccati certificates."""
        if request.param == "linear_2d":
            sys, cost = linear_2d, quadratic_cost(np.eye(2), np.eye(1))
        else:
            sys, cost = get_benchmark(request.param)
        return sys, cost, compute_certificate(sys, cost)

    def test_sontag_decrease_identity(self, system_and_certificate):
        """∇V·(f + g·u) = −√(a² + ‖b‖⁴) wherever b does not vanish."""
        sys, _, cert = system_and_certificate
        V = ExpressionFunction.quadratic(cert.P_matrix)
        controller = SontagController(V, sys)
        X = sys.domain.sample(np.random.default_rng(3), 500)
        p = V.gradient(X)
        a = np.einsum("mi,mi->m", p, sys.drift(X))
        b = np.einsum("mik,mi->mk", sys.input_matrix(X), p)
        keep = np.sum(b * b, axis=1) > 1e-8
        assert keep.sum() > 400
        X, p, a, b = X[keep], p[keep], a[keep], b[keep]
        U = controller.evaluate(X)
        xdot = sys.drift(X) + np.einsum("mik,mk->mi", sys.input_matrix(X), U)
        decrease = np.einsum("mi,mi->m", p, xdot)
        expected = -np.sqrt(a * a + np.sum(b * b, axis=1) ** 2)
        assert np.allclose(decrease, expected, rtol=1e-9, atol=1e-9)

    @pytest.mark.parametrize("x0", [[0.5, -0.5], [-0.3, 0.8], [0.1, 0.1]])
    def test_cost_non_decreasing(self, system_and_certificate, x0):
        """J(t) never decreases along the closed loop."""
        sys, cost, cert = system_and_certificate
        controller = SontagController(ExpressionFunction.quadratic(cert.P_matrix), sys)
        trajectory = simulate(sys, cost, controller, x0, T=5.0)
        assert trajectory.J[0] == 0.0
        assert np.all(np.diff(trajectory.J) >= -1e-8 * max(1.0, trajectory.J[-1]))
        assert trajectory.final_cost > 0.0
