"""
Level functions, vector fields, feedbacks and condition terms for verification.

Everything here evaluates both on point batches (shape (m, n)) and on box
batches given by corner arrays ``lo``/``hi`` (shape (m, n)), the latter
returning sound Interval enclosures. The verifier only talks to these
interfaces, so the same conditions serve V_P = xᵀPx, synthetic β(V_P)
functions and trained networks.
"""

from typing import List, Optional, Protocol, Sequence, Tuple

import numpy as np

from .errors import VerificationError
from .expr import (
    Const,
    Expression,
    compile_vector,
    dot,
    exp,
    gradient,
    jacobian,
    mul,
    quadratic_form,
    sub,
    tanh,
)
from .interval import Interval
from .logging_config import get_logger
from .models import TransformKind, TransformSpec
from .pinn import NeuralValueFunction
from .system import ControlAffineSystem, CostSpec, closed_loop, linear_feedback

logger = get_logger(__name__)

CLAMP_FLOOR = 1e-6


# =============================================================================
# Level functions
# =============================================================================

class LevelFunction(Protocol):
    """Scalar function with point and interval evaluation up to second order."""
    n: int
    expression: Optional[Expression]

    def value(self, X: np.ndarray) -> np.ndarray: ...

    def gradient(self, X: np.ndarray) -> np.ndarray: ...

    def enclose(self, lo: np.ndarray, hi: np.ndarray) -> Interval: ...

    def enclose_gradient(self, lo: np.ndarray, hi: np.ndarray) -> Interval: ...

    def enclose_hessian(self, lo: np.ndarray, hi: np.ndarray) -> Interval: ...


class ExpressionFunction:
    """Level function given by a symbolic expression."""

    def __init__(self, expression: Expression, n: int, name: str = "V",
                 transform: Optional[TransformSpec] = None):
        self.expression = expression
        self.n = n
        self.name = name
        self.transform = transform
        self.gradient_expressions = gradient(expression, n)
        self._value = compile_vector([expression])
        self._gradient = compile_vector(self.gradient_expressions)
        self._hessian = None

    @classmethod
    def quadratic(cls, P: np.ndarray, name: str = "V_P") -> "ExpressionFunction":
        P = np.atleast_2d(np.asarray(P, dtype=np.float64))
        return cls(quadratic_form(P), P.shape[0], name)

    @classmethod
    def transformed(cls, inner: Expression, n: int, transform: TransformSpec,
                    name: str = "beta(V)") -> "ExpressionFunction":
        """β composed with an expression, e.g. a synthetic W = β(V_P)."""
        scaled = mul(Const(transform.alpha), inner)
        if transform.kind == TransformKind.KRUZKOV:
            outer = sub(Const(1.0), exp(mul(Const(-1.0), scaled)))
        else:
            outer = tanh(scaled)
        return cls(outer, n, name, transform)

    def value(self, X: np.ndarray) -> np.ndarray:
        return self._value.evaluate(X)[..., 0]

    def gradient(self, X: np.ndarray) -> np.ndarray:
        return self._gradient.evaluate(X)

    forward = value
    input_gradient = gradient

    def enclose(self, lo: np.ndarray, hi: np.ndarray) -> Interval:
        return self._value.enclose(lo, hi)[:, 0]

    def enclose_gradient(self, lo: np.ndarray, hi: np.ndarray) -> Interval:
        return self._gradient.enclose(lo, hi)

    def enclose_hessian(self, lo: np.ndarray, hi: np.ndarray) -> Interval:
        if self._hessian is None:
            self._hessian = compile_vector([e for row in jacobian(self.gradient_expressions, self.n) for e in row])
        out = self._hessian.enclose(lo, hi)
        return out.reshape(out.shape[0], self.n, self.n)


class NeuralLevelFunction:
    """
    Interval extension of a tanh network.

    Values use the natural extension layer by layer (tanh is monotone, so
    each neuron is endpoint-tight); gradients and Hessians propagate
    interval Jacobians forward. With ``mean_value`` the value and gradient
    enclosures are intersected with their first-order (mean-value) forms.
    """

    expression: Optional[Expression] = None

    def __init__(self, net: NeuralValueFunction, mean_value: bool = False, name: str = "W_N"):
        self.net = net
        self.n = net.n
        self.mean_value = mean_value
        self.name = name
        self.transform = net.transform

    def value(self, X: np.ndarray) -> np.ndarray:
        return self.net.forward(X)

    def gradient(self, X: np.ndarray) -> np.ndarray:
        return self.net.input_gradient(X)

    forward = value
    input_gradient = gradient

    def _propagate(self, lo: np.ndarray, hi: np.ndarray, order: int) -> Tuple[Interval, Optional[Interval], Optional[Interval]]:
        lo = np.atleast_2d(lo)
        hi = np.atleast_2d(hi)
        m, n = lo.shape
        z = Interval(lo, hi)
        J = Interval.point(np.broadcast_to(np.eye(n), (m, n, n))) if order >= 1 else None
        H = Interval.point(np.zeros((m, n, n, n))) if order >= 2 else None
        for w, b in zip(self.net.weights[:-1], self.net.biases[:-1]):
            pre = z.matmul(w) + b
            act = pre.tanh()
            if J is not None:
                slope = 1.0 - act.sq()
                pre_J = J.moveaxis(1, 2).matmul(w).moveaxis(2, 1)
                if H is not None:
                    pre_H = H.moveaxis(1, 3).matmul(w).moveaxis(3, 1)
                    curvature = (act * slope).scale(-2.0)
                    outer = pre_J[:, :, :, None] * pre_J[:, :, None, :]
                    H = slope[:, :, None, None] * pre_H + curvature[:, :, None, None] * outer
                J = slope[:, :, None] * pre_J
            z = act
        w_out, b_out = self.net.weights[-1], self.net.biases[-1]
        value = (z.matmul(w_out) + b_out)[:, 0]
        grad = J.moveaxis(1, 2).matmul(w_out)[:, :, 0] if J is not None else None
        hess = H.moveaxis(1, 3).matmul(w_out)[:, :, :, 0] if H is not None else None
        return value, grad, hess

    def enclose(self, lo: np.ndarray, hi: np.ndarray) -> Interval:
        if not self.mean_value:
            return self._propagate(lo, hi, 0)[0]
        value, grad, _ = self._propagate(lo, hi, 1)
        center = 0.5 * (np.atleast_2d(lo) + np.atleast_2d(hi))
        at_center = self._propagate(center, center, 0)[0]
        offset = Interval(np.atleast_2d(lo), np.atleast_2d(hi)) - center
        form = at_center + (grad * offset).sum(axis=-1)
        return value.intersect(form)

    def enclose_gradient(self, lo: np.ndarray, hi: np.ndarray) -> Interval:
        if not self.mean_value:
            return self._propagate(lo, hi, 1)[1]
        _, grad, hess = self._propagate(lo, hi, 2)
        center = 0.5 * (np.atleast_2d(lo) + np.atleast_2d(hi))
        at_center = self._propagate(center, center, 1)[1]
        offset = Interval(np.atleast_2d(lo), np.atleast_2d(hi)) - center
        form = at_center + (hess * offset[:, None, :]).sum(axis=-1)
        return grad.intersect(form)

    def enclose_hessian(self, lo: np.ndarray, hi: np.ndarray) -> Interval:
        return self._propagate(lo, hi, 2)[2]


def level_function(source, mean_value: bool = False) -> LevelFunction:
    """Wrap a network or pass a level function through."""
    if isinstance(source, NeuralValueFunction):
        return NeuralLevelFunction(source, mean_value=mean_value)
    return source


# =============================================================================
# Transform pieces on intervals
# =============================================================================

def _psi_interval(transform: TransformSpec, W: Interval) -> Interval:
    if transform.kind == TransformKind.KRUZKOV:
        return Interval.point(np.full(W.shape, transform.alpha))
    return (W + 1.0).scale(transform.alpha)


def _clamped_phi_interval(transform: TransformSpec, W: Interval, floor: float) -> Interval:
    return (1.0 - W).clamp_below(floor) * _psi_interval(transform, W)


def clamped_phi(transform: TransformSpec, W: np.ndarray, floor: float = CLAMP_FLOOR) -> np.ndarray:
    """(1 − W)ψ(W) with (1 − W) floored."""
    return np.maximum(1.0 - W, floor) * transform.psi(W)


# =============================================================================
# Vector fields and feedbacks
# =============================================================================

class VectorField(Protocol):
    n: int

    def evaluate(self, X: np.ndarray) -> np.ndarray: ...

    def enclose(self, lo: np.ndarray, hi: np.ndarray) -> Interval: ...

    def enclose_jacobian(self, lo: np.ndarray, hi: np.ndarray) -> Interval: ...


class ExpressionField:
    """Vector field given by n expressions."""

    def __init__(self, expressions: Sequence[Expression], n: int):
        self.expressions = tuple(expressions)
        self.n = n
        self._program = compile_vector(self.expressions)
        self._jacobian = None

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        return self._program.evaluate(X)

    def enclose(self, lo: np.ndarray, hi: np.ndarray) -> Interval:
        return self._program.enclose(lo, hi)

    def enclose_jacobian(self, lo: np.ndarray, hi: np.ndarray) -> Interval:
        if self._jacobian is None:
            self._jacobian = compile_vector([e for row in jacobian(self.expressions, self.n) for e in row])
        out = self._jacobian.enclose(lo, hi)
        return out.reshape(out.shape[0], len(self.expressions), self.n)


class LinearFeedback:
    """u = Kx."""

    def __init__(self, K: np.ndarray):
        self.K = np.atleast_2d(np.asarray(K, dtype=np.float64))
        self.expressions: Optional[Tuple[Expression, ...]] = linear_feedback(self.K)

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.K.T


class HJBFeedback:
    """
    Optimal-control feedback from a transformed value function:

        k(x) = −1/(2(1 − W)ψ(W)) · R⁻¹gᵀ∇W − k(0)

    with (1 − W) floored at ``floor``; the shift by k(0) (``zero_shift``)
    makes the feedback vanish at the origin. Interval enclosures need a
    constant R.
    """

    expressions: Optional[Tuple[Expression, ...]] = None

    def __init__(self, fn: LevelFunction, sys: ControlAffineSystem, cost: CostSpec,
                 transform: Optional[TransformSpec] = None, zero_shift: bool = True,
                 floor: float = CLAMP_FLOOR):
        self.fn = fn
        self.sys = sys
        self.cost = cost
        self.transform = transform or getattr(fn, "transform", None) or TransformSpec()
        self.floor = floor
        self.n = sys.n
        self.k = sys.k
        self.shift = np.zeros(sys.k)
        if zero_shift:
            self.shift = self._unshifted(np.zeros((1, sys.n)))[0]
        self._g_jacobian = None

    def _unshifted(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        W = np.atleast_1d(self.fn.value(X))
        p = np.atleast_2d(self.fn.gradient(X))
        g = self.sys.input_matrix(X)
        R = self.cost.R_matrix(X)
        m = np.einsum("mik,mi->mk", g, p)
        scale = 1.0 / (2.0 * clamped_phi(self.transform, W, self.floor))
        return -scale[:, None] * np.linalg.solve(R, m[..., None])[..., 0]

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = self._unshifted(X) - self.shift
        return out[0] if X.ndim == 1 else out

    # -------------------------------------------------------------------------
    # Intervals
    # -------------------------------------------------------------------------

    def _R_parts(self) -> Tuple[np.ndarray, np.ndarray]:
        R = self.cost.R_constant
        if R is None:
            raise VerificationError("interval enclosures of the HJB feedback need a constant R")
        L_inv = np.linalg.inv(np.linalg.cholesky(R))
        return np.linalg.inv(R), L_inv

    def enclose_parts(self, lo: np.ndarray, hi: np.ndarray) -> Tuple[Interval, Interval, Interval]:
        """(∇W, m = gᵀ∇W, s = 1/(2φ_clamped(W))) over boxes."""
        W = self.fn.enclose(lo, hi)
        p = self.fn.enclose_gradient(lo, hi)
        g = self.sys.input_program.enclose(lo, hi).reshape(len(W), self.n, self.k)
        m = (g * p[:, :, None]).sum(axis=1)
        s = _clamped_phi_interval(self.transform, W, self.floor).reciprocal(strict=False).scale(0.5)
        return p, m, s

    def enclose(self, lo: np.ndarray, hi: np.ndarray) -> Interval:
        R_inv, _ = self._R_parts()
        _, m, s = self.enclose_parts(lo, hi)
        return (m.matmul(R_inv) * s[:, None]).scale(-1.0) - self.shift

    def enclose_jacobian(self, lo: np.ndarray, hi: np.ndarray) -> Interval:
        """∂k/∂x over boxes, shape (m, k, n); unbounded where the clamp may be active."""
        R_inv, _ = self._R_parts()
        n, k = self.n, self.k
        W = self.fn.enclose(lo, hi)
        p = self.fn.enclose_gradient(lo, hi)
        H = self.fn.enclose_hessian(lo, hi)
        count = len(W)
        g = self.sys.input_program.enclose(lo, hi).reshape(count, n, k)
        if self._g_jacobian is None:
            entries = [e for row in self.sys.g for e in row]
            self._g_jacobian = compile_vector([e for row in jacobian(entries, n) for e in row])
        Jg = self._g_jacobian.enclose(lo, hi).reshape(count, n, k, n)

        phi = (1.0 - W) * _psi_interval(self.transform, W)
        if self.transform.kind == TransformKind.KRUZKOV:
            dphi = Interval.point(np.full(count, -self.transform.alpha))
        else:
            dphi = W.scale(-2.0 * self.transform.alpha)
        s = phi.reciprocal(strict=False).scale(0.5)
        ds = (dphi * s * s).scale(-2.0)                         # d/dW of 1/(2φ)
        clamp_possible = W.hi > 1.0 - self.floor
        m = (g * p[:, :, None]).sum(axis=1)                     # (count, k)
        # ∂m_l/∂x_j = Σ_i ∂g_il/∂x_j p_i + g_il H_ij
        dm = (Jg * p[:, :, None, None]).sum(axis=1) + (g[:, :, :, None] * H[:, :, None, :]).sum(axis=1)
        R_inv_m = m.matmul(R_inv)                               # (count, k)
        R_inv_dm = dm.moveaxis(1, 2).matmul(R_inv).moveaxis(2, 1)  # (count, k, n)
        jac = (ds[:, None, None] * R_inv_m[:, :, None] * p[:, None, :]
               + s[:, None, None] * R_inv_dm).scale(-1.0)
        lo_out = np.where(clamp_possible[:, None, None], -np.inf, jac.lo)
        hi_out = np.where(clamp_possible[:, None, None], np.inf, jac.hi)
        return Interval(lo_out, hi_out)


class ClosedLoopField:
    """ẋ = f + g·k for a feedback with interval enclosures."""

    def __init__(self, sys: ControlAffineSystem, feedback: HJBFeedback):
        self.sys = sys
        self.feedback = feedback
        self.n = sys.n
        self._f = ExpressionField(sys.f, sys.n)
        self._g_jacobian = None

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return self.sys.vector_field(X, self.feedback.evaluate(X))

    def enclose(self, lo: np.ndarray, hi: np.ndarray) -> Interval:
        f = self._f.enclose(lo, hi)
        g = self.sys.input_program.enclose(lo, hi).reshape(len(f), self.n, self.sys.k)
        u = self.feedback.enclose(lo, hi)
        return f + (g * u[:, None, :]).sum(axis=-1)

    def enclose_jacobian(self, lo: np.ndarray, hi: np.ndarray) -> Interval:
        n, k = self.n, self.sys.k
        Jf = self._f.enclose_jacobian(lo, hi)
        count = Jf.shape[0]
        g = self.sys.input_program.enclose(lo, hi).reshape(count, n, k)
        if self._g_jacobian is None:
            entries = [e for row in self.sys.g for e in row]
            self._g_jacobian = compile_vector([e for row in jacobian(entries, n) for e in row])
        Jg = self._g_jacobian.enclose(lo, hi).reshape(count, n, k, n)
        u = self.feedback.enclose(lo, hi)
        Ju = self.feedback.enclose_jacobian(lo, hi)
        return Jf + (Jg * u[:, None, :, None]).sum(axis=2) + (g[:, :, :, None] * Ju[:, None, :, :]).sum(axis=2)


def closed_loop_field(sys: ControlAffineSystem, feedback) -> VectorField:
    """Symbolic closed loop when the feedback has expressions, else the interval composition."""
    expressions = getattr(feedback, "expressions", None)
    if expressions is not None:
        return ExpressionField(closed_loop(sys, expressions), sys.n)
    return ClosedLoopField(sys, feedback)


# =============================================================================
# Condition terms
# =============================================================================

class Term(Protocol):
    name: str
    expression: Optional[Expression]

    def evaluate(self, X: np.ndarray) -> np.ndarray: ...

    def enclose(self, lo: np.ndarray, hi: np.ndarray) -> Interval: ...


class ExpressionTerm:
    def __init__(self, expression: Expression, name: str = "term"):
        self.expression: Optional[Expression] = expression
        self.name = name
        self._program = compile_vector([expression])

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        return self._program.evaluate(np.atleast_2d(X))[:, 0]

    def enclose(self, lo: np.ndarray, hi: np.ndarray) -> Interval:
        return self._program.enclose(lo, hi)[:, 0]


class LevelTerm:
    """The level function itself, optionally shifted: fn(x) − offset."""

    def __init__(self, fn: LevelFunction, offset: float = 0.0, name: Optional[str] = None):
        self.fn = fn
        self.offset = offset
        self.name = name or getattr(fn, "name", "level")
        expression = getattr(fn, "expression", None)
        self.expression = None if expression is None else sub(expression, Const(offset))

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        return np.atleast_1d(self.fn.value(np.atleast_2d(X))) - self.offset

    def enclose(self, lo: np.ndarray, hi: np.ndarray) -> Interval:
        return self.fn.enclose(lo, hi) - self.offset


class LieDerivativeTerm:
    """∇fn · F for a vector field F."""

    def __init__(self, fn: LevelFunction, field: VectorField, name: str = "lie"):
        self.fn = fn
        self.field = field
        self.name = name
        fn_expr = getattr(fn, "expression", None)
        field_exprs = getattr(field, "expressions", None)
        if fn_expr is not None and field_exprs is not None:
            self.expression = dot(gradient(fn_expr, fn.n), list(field_exprs))
        else:
            self.expression = None

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.einsum("mi,mi->m", np.atleast_2d(self.fn.gradient(X)), self.field.evaluate(X))

    def enclose(self, lo: np.ndarray, hi: np.ndarray) -> Interval:
        return (self.fn.enclose_gradient(lo, hi) * self.field.enclose(lo, hi)).sum(axis=-1)


class NeuralClosedLoopTerm:
    """
    ∇W·(f + g k) for the HJB feedback k, written as

        ∇W·f − s·mᵀR⁻¹m − m·k(0),   m = gᵀ∇W,  s = 1/(2φ(W)),

    so the quadratic part is enclosed as a sum of squares (R = LLᵀ).
    """

    expression: Optional[Expression] = None

    def __init__(self, feedback: HJBFeedback, name: str = "closed_loop"):
        self.feedback = feedback
        self.name = name
        self._f = ExpressionField(feedback.sys.f, feedback.n)

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        p = np.atleast_2d(self.feedback.fn.gradient(X))
        u = self.feedback.evaluate(X)
        return np.einsum("mi,mi->m", p, self.feedback.sys.vector_field(X, u))

    def enclose(self, lo: np.ndarray, hi: np.ndarray) -> Interval:
        _, L_inv = self.feedback._R_parts()
        p, m, s = self.feedback.enclose_parts(lo, hi)
        drift = (p * self._f.enclose(lo, hi)).sum(axis=-1)
        y = m.matmul(L_inv)
        quadratic = y.sq().sum(axis=-1)
        shift = (m * self.feedback.shift).sum(axis=-1)
        return drift - s * quadratic - shift


def input_lie_terms(fn: LevelFunction, sys: ControlAffineSystem) -> List[LieDerivativeTerm]:
    """b_j = ∇fn · g_j for every input column."""
    return [LieDerivativeTerm(fn, ExpressionField(sys.g_column(j), sys.n), name=f"b{j + 1}")
            for j in range(sys.k)]
