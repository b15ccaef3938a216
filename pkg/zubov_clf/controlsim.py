"""
Stabilizing controllers and closed-loop simulation with accumulated cost.

Controllers are objects with ``evaluate(X)`` mapping one state (n,) to an
input (k,) or a batch (m, n) to (m, k). LQR and HJB feedbacks live in
``levelfn`` (they also carry interval enclosures for verification); this
module adds Sontag's universal formula and the hybrid switch between a
neural outer controller and a quadratic inner one.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import numpy as np
from scipy.integrate import solve_ivp

from .errors import SimulationError
from .levelfn import ExpressionFunction, HJBFeedback, LevelFunction, LinearFeedback, level_function
from .logging_config import get_logger
from .models import QuadraticCertificate, TransformSpec
from .storage import write_csv
from .system import ControlAffineSystem, CostSpec

logger = get_logger(__name__)

SONTAG_EPSILON = 1e-10
RTOL = 1e-8
ATOL = 1e-10
MAX_SWITCHES = 1000

# costs.json and traj/ names of controller kinds that differ from the kind
COST_LABELS = {"neural_hjb": "hjb"}


# =============================================================================
# Sontag's formula
# =============================================================================

def sontag_control(a, b, epsilon: float = SONTAG_EPSILON) -> np.ndarray:
    """
    u = −((a + √(a² + ‖b‖⁴)) / ‖b‖²)·b, and 0 where ‖b‖² ≤ epsilon.

    ``a`` is scalar or (m,), ``b`` is (k,) or (m, k).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    b_sq = np.sum(b * b, axis=-1)
    active = b_sq > epsilon
    safe = np.where(active, b_sq, 1.0)
    gain = np.where(active, (a + np.sqrt(a * a + safe * safe)) / safe, 0.0)
    return -gain[..., None] * b


class SontagController:
    """Sontag's formula built from a level function V: a = ∇V·f, b = gᵀ∇V."""

    def __init__(self, fn: LevelFunction, sys: ControlAffineSystem, epsilon: float = SONTAG_EPSILON):
        self.fn = fn
        self.sys = sys
        self.epsilon = epsilon

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        batch = np.atleast_2d(X)
        p = np.atleast_2d(self.fn.gradient(batch))
        a = np.einsum("mi,mi->m", p, self.sys.drift(batch))
        b = np.einsum("mik,mi->mk", self.sys.input_matrix(batch), p)
        u = sontag_control(a, b, self.epsilon)
        return u[0] if X.ndim == 1 else u


def hjb_control(net, sys: ControlAffineSystem, cost: CostSpec, x: np.ndarray,
                transform: Optional[TransformSpec] = None, zero_shift: bool = True) -> np.ndarray:
    """
    k(x) = −1/(2(1 − W)ψ(W)) · R⁻¹gᵀ∇W, with (1 − W) floored at 1e-6 and
    k(0) subtracted when ``zero_shift`` is set.
    """
    feedback = HJBFeedback(level_function(net), sys, cost, transform=transform, zero_shift=zero_shift)
    return feedback.evaluate(x)


class HybridController:
    """
    Outer controller away from the origin, inner controller on the quadratic
    CLF region {V_P ≤ level}.

    Switching uses a hysteresis band: the inner controller takes over once
    V_P drops to (1 − hysteresis)·level and hands back only when V_P rises
    above level.
    """

    def __init__(self, outer, inner, quadratic: LevelFunction, level: float, hysteresis: float = 0.05):
        if not 0.0 <= hysteresis < 1.0:
            raise SimulationError(f"hysteresis must lie in [0, 1), got {hysteresis}")
        self.outer = outer
        self.inner = inner
        self.quadratic = quadratic
        self.level = level
        self.hysteresis = hysteresis

    def initial_mode(self, x: np.ndarray) -> str:
        return "inner" if float(self.quadratic.value(np.atleast_2d(x))[0]) <= self.entry_level else "outer"

    @property
    def entry_level(self) -> float:
        return (1.0 - self.hysteresis) * self.level

    def for_mode(self, mode: str):
        return self.inner if mode == "inner" else self.outer

    def switch_event(self, mode: str) -> Callable:
        """Event function for solve_ivp on the augmented state (x, J)."""
        n = self.quadratic.n
        if mode == "outer":
            threshold, direction = self.entry_level, -1.0
        else:
            threshold, direction = self.level, 1.0

        def event(t: float, z: np.ndarray) -> float:
            return float(self.quadratic.value(z[None, :n])[0]) - threshold

        event.terminal = True
        event.direction = direction
        return event

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        """Memoryless approximation (inner on {V_P ≤ level}) for plots and batch evaluation."""
        X = np.asarray(X, dtype=np.float64)
        batch = np.atleast_2d(X)
        inner = np.atleast_1d(self.quadratic.value(batch)) <= self.level
        u = np.where(inner[:, None], np.atleast_2d(self.inner.evaluate(batch)),
                     np.atleast_2d(self.outer.evaluate(batch)))
        return u[0] if X.ndim == 1 else u


def make_controller(kind: str, sys: ControlAffineSystem, cost: CostSpec,
                    cert: Optional[QuadraticCertificate] = None, net=None,
                    inner_level: Optional[float] = None, hysteresis: float = 0.05,
                    zero_shift: bool = True):
    """
    Build a controller by kind: ``lqr``, ``sontag`` (from the network when
    given, else V_P), ``sontag_quadratic``, ``neural_hjb`` or ``hybrid``
    (neural HJB outside, quadratic Sontag on {V_P ≤ inner_level}).
    """
    def quadratic() -> ExpressionFunction:
        if cert is None:
            raise SimulationError(f"controller '{kind}' needs a quadratic certificate")
        return ExpressionFunction.quadratic(cert.P_matrix)

    def neural() -> LevelFunction:
        if net is None:
            raise SimulationError(f"controller '{kind}' needs a network")
        return level_function(net)

    if kind == "lqr":
        if cert is None:
            raise SimulationError("controller 'lqr' needs a quadratic certificate")
        return LinearFeedback(cert.K_matrix)
    if kind == "sontag":
        return SontagController(neural() if net is not None else quadratic(), sys)
    if kind == "sontag_quadratic":
        return SontagController(quadratic(), sys)
    if kind == "neural_hjb":
        return HJBFeedback(neural(), sys, cost, zero_shift=zero_shift)
    if kind == "hybrid":
        level = inner_level if inner_level is not None else (cert.c_P if cert is not None else 0.0)
        if not level > 0.0:
            raise SimulationError("hybrid controller needs a positive inner level")
        return HybridController(
            outer=HJBFeedback(neural(), sys, cost, zero_shift=zero_shift),
            inner=SontagController(quadratic(), sys),
            quadratic=quadratic(),
            level=level,
            hysteresis=hysteresis,
        )
    raise SimulationError(f"unknown controller kind '{kind}'")


# =============================================================================
# Simulation
# =============================================================================

@dataclass
class Trajectory:
    """Closed-loop trajectory on a fixed output mesh."""
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    J: np.ndarray
    blew_up: bool = False
    switches: List[float] = field(default_factory=list)
    message: str = ""

    @property
    def final_state(self) -> np.ndarray:
        return self.x[-1]

    @property
    def final_cost(self) -> float:
        return float(self.J[-1])

    def write_csv(self, path: Union[str, Path]) -> Path:
        """Columns t, x1..xn, u1..uk, J."""
        n = self.x.shape[1]
        k = self.u.shape[1]
        header = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{j + 1}" for j in range(k)] + ["J"]
        rows = np.column_stack([self.t, self.x, self.u, self.J])
        return write_csv(path, header, rows)


def _segment(sys: ControlAffineSystem, cost: CostSpec, controller, z0: np.ndarray,
             t0: float, T: float, mesh: np.ndarray, events: List[Callable]):
    n = sys.n

    def rhs(t: float, z: np.ndarray) -> np.ndarray:
        x = z[:n]
        u = np.asarray(controller.evaluate(x), dtype=np.float64)
        return np.concatenate([sys.vector_field(x, u), [float(cost.running_cost(x, u))]])

    t_eval = mesh[(mesh >= t0) & (mesh <= T)]
    result = solve_ivp(rhs, (t0, T), z0, method="RK45", t_eval=t_eval, rtol=RTOL, atol=ATOL,
                       events=events)
    if result.status == -1:
        raise SimulationError(f"integration failed at t={t0}: {result.message}")
    return result


def simulate(sys: ControlAffineSystem, cost: CostSpec, controller, x0: Sequence[float],
             T: float, blowup: float = 1e6, points: int = 1001) -> Trajectory:
    """
    Integrate the augmented state (x, J) with J̇ = q(x) + uᵀR(x)u.

    Embedded RK4(5) with rtol 1e-8 and atol 1e-10; results on ``points``
    equally spaced times. Leaving the ball ‖x‖ ≤ blowup stops the run and
    sets ``blew_up``. Hybrid controllers switch modes through events.

    Raises:
        SimulationError: T ≤ 0, bad x0, or integrator failure
    """
    if not T > 0.0:
        raise SimulationError(f"horizon must be positive, got {T}")
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (sys.n,):
        raise SimulationError(f"x0 has shape {x0.shape}, expected ({sys.n},)")
    n = sys.n
    mesh = np.linspace(0.0, T, points)

    def escape(t: float, z: np.ndarray) -> float:
        return float(np.linalg.norm(z[:n])) - blowup

    escape.terminal = True

    hybrid = isinstance(controller, HybridController)
    mode = controller.initial_mode(x0) if hybrid else None
    z = np.concatenate([x0, [0.0]])
    t0 = 0.0
    times: List[np.ndarray] = []
    states: List[np.ndarray] = []
    modes: List[Optional[str]] = []
    switches: List[float] = []
    blew_up = False
    message = ""
    while True:
        active = controller.for_mode(mode) if hybrid else controller
        events = [escape] + ([controller.switch_event(mode)] if hybrid else [])
        result = _segment(sys, cost, active, z, t0, T, mesh, events)
        times.append(result.t)
        states.append(result.y.T)
        modes.extend([mode] * len(result.t))
        message = result.message
        if result.status != 1:
            break
        if result.t_events[0].size:
            blew_up = True
            logger.warning("trajectory from %s left the ball of radius %.3g at t=%.4g",
                           x0.tolist(), blowup, float(result.t_events[0][0]))
            break
        t0 = float(result.t_events[1][0])
        z = result.y_events[1][0]
        switches.append(t0)
        mode = "outer" if mode == "inner" else "inner"
        logger.debug("controller switch to %s at t=%.6g", mode, t0)
        if len(switches) > MAX_SWITCHES:
            raise SimulationError(f"more than {MAX_SWITCHES} controller switches (chattering)")
        # the event point itself is not on the mesh; resume just after it
        mesh = mesh[mesh > t0]
        if not mesh.size:
            break

    t = np.concatenate(times) if times else np.zeros(0)
    Z = np.concatenate(states) if states else np.zeros((0, n + 1))
    X = Z[:, :n]
    if len(t):
        U = np.stack([
            np.asarray((controller.for_mode(m) if hybrid else controller).evaluate(x), dtype=np.float64)
            for x, m in zip(X, modes)
        ])
    else:
        U = np.zeros((0, sys.k))
    return Trajectory(t=t, x=X, u=U.reshape(len(t), -1), J=Z[:, n], blew_up=blew_up,
                      switches=switches, message=message)


def simulate_batch(sys: ControlAffineSystem, cost: CostSpec, controller, x0s: Sequence[Sequence[float]],
                   T: float, blowup: float = 1e6, threads: int = 1) -> List[Trajectory]:
    """One trajectory per initial condition, in input order."""
    def run(x0: Sequence[float]) -> Trajectory:
        return simulate(sys, cost, controller, x0, T, blowup)

    if threads > 1 and len(x0s) > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            return list(executor.map(run, x0s))
    return [run(x0) for x0 in x0s]


def cost_label(kind: str) -> str:
    """Name of a controller kind in cost comparisons and trajectory files."""
    return COST_LABELS.get(kind, kind)


def compare_costs(sys: ControlAffineSystem, cost: CostSpec, controllers: Dict[str, Any],
                  x0: Sequence[float], T: float, blowup: float = 1e6) -> Dict[str, Any]:
    """{"x0": [...], "J_<name>": ..., "T": ...} plus the trajectories under "trajectories"."""
    out: Dict[str, Any] = {"x0": [float(v) for v in x0], "T": float(T)}
    trajectories: Dict[str, Trajectory] = {}
    for name, controller in controllers.items():
        trajectory = simulate(sys, cost, controller, x0, T, blowup)
        trajectories[name] = trajectory
        out[f"J_{name}"] = trajectory.final_cost
        out[f"final_norm_{name}"] = float(np.linalg.norm(trajectory.final_state))
        logger.info("%s from %s: J(T) = %.6g, |x(T)| = %.3g", name, list(x0),
                    trajectory.final_cost, out[f"final_norm_{name}"])
    out["trajectories"] = trajectories
    return out
