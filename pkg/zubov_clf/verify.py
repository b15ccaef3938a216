"""
δ-complete verification of Lyapunov and control Lyapunov conditions.

A Condition says: for every x in the domain outside the exclusion regions,
if every premise holds then the conclusion term is negative. The native
checker decides it by interval branch and bound:

    - a box is discarded when it lies inside an exclusion, when interval
      evaluation refutes a (δ-weakened) premise, or when the conclusion's
      enclosure is negative;
    - a box whose midpoint satisfies the δ-weakened premises and the
      δ-weakened negated conclusion is a counterexample;
    - every other box is split along its widest edge.

Boxes are processed one generation at a time; within a generation chunks
are classified in parallel and merged in order, so the verdict does not
depend on the thread count.

The level drivers on top (verify_quadratic, verify_neural,
verify_closed_loop_roa) bisect on sublevel-set levels and handle the
origin with a separate ball certificate.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    CertificateRejectedError,
    ExpressionEvaluationError,
    NeuralVerificationError,
    VerificationError,
)
from .expr import dot, sum_of, to_polynomial, var
from .interval import Box
from .levelfn import (
    ExpressionField,
    ExpressionFunction,
    ExpressionTerm,
    HJBFeedback,
    LevelFunction,
    LevelTerm,
    LieDerivativeTerm,
    LinearFeedback,
    NeuralClosedLoopTerm,
    Term,
    VectorField,
    closed_loop_field,
    input_lie_terms,
    level_function,
)
from .logging_config import get_logger
from .models import NeuralLevels, QuadraticCertificate, Verdict, VerdictOutcome, VerifyConfig
from .system import ControlAffineSystem, CostSpec

logger = get_logger(__name__)

CHUNK_SIZE = 4096
BISECTION_STEPS = 60
RADIUS_STEPS = 50
BELOW_ONE = float(np.nextafter(1.0, 0.0))


# =============================================================================
# Conditions
# =============================================================================

@dataclass(frozen=True)
class Constraint:
    """Premise lower ≤ term ≤ upper; an equality premise has lower == upper."""
    term: Term
    lower: float = -np.inf
    upper: float = np.inf

    def describe(self) -> str:
        if self.lower == self.upper:
            return f"{self.term.name} = {self.lower:g}"
        parts = []
        if np.isfinite(self.lower):
            parts.append(f"{self.lower:g} <=")
        parts.append(self.term.name)
        if np.isfinite(self.upper):
            parts.append(f"<= {self.upper:g}")
        return " ".join(parts)


@dataclass(frozen=True)
class Exclusion:
    """Region {term < level} removed from the domain ({term ≤ level} when strict)."""
    term: Term
    level: float
    strict: bool = False


@dataclass(frozen=True)
class Condition:
    """premises ⇒ conclusion < 0 on domain ∖ exclusions."""
    name: str
    premises: Tuple[Constraint, ...]
    conclusion: Term
    domain: Box
    exclusions: Tuple[Exclusion, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "premises", tuple(self.premises))
        object.__setattr__(self, "exclusions", tuple(self.exclusions))
        n = self.domain.dim
        terms = [p.term for p in self.premises] + [e.term for e in self.exclusions] + [self.conclusion]
        for term in terms:
            fn = getattr(term, "fn", None)
            arity = getattr(fn, "n", None)
            if arity is not None and arity != n:
                raise VerificationError(f"term '{term.name}' has arity {arity}, domain has {n}")

    def describe(self) -> str:
        premises = " and ".join(p.describe() for p in self.premises) or "true"
        return f"{self.name}: {premises} => {self.conclusion.name} < 0"


def origin_ball(n: int, radius: float) -> Exclusion:
    """Exclusion of the open Euclidean ball ‖x‖ < radius."""
    norm_sq = sum_of(var(i) * var(i) for i in range(n))
    return Exclusion(ExpressionTerm(norm_sq, name="|x|^2"), radius * radius)


def _point_values(term: Term, X: np.ndarray) -> np.ndarray:
    try:
        with np.errstate(all="ignore"):
            return np.asarray(term.evaluate(X), dtype=np.float64)
    except ExpressionEvaluationError:
        return np.full(len(X), np.nan)


# =============================================================================
# Branch and bound
# =============================================================================

def _classify(cond: Condition, delta: float, lo: np.ndarray, hi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(discard, counterexample) flags for a chunk of boxes."""
    discard = np.zeros(len(lo), dtype=bool)
    candidate = np.ones(len(lo), dtype=bool)
    mid = 0.5 * (lo + hi)
    with np.errstate(invalid="ignore"):
        for exclusion in cond.exclusions:
            enc = exclusion.term.enclose(lo, hi)
            values = _point_values(exclusion.term, mid)
            if exclusion.strict:
                discard |= enc.hi <= exclusion.level
                candidate &= values > exclusion.level
            else:
                discard |= enc.hi < exclusion.level
                candidate &= values >= exclusion.level
        for premise in cond.premises:
            enc = premise.term.enclose(lo, hi)
            discard |= (enc.lo > premise.upper + delta) | (enc.hi < premise.lower - delta)
            values = _point_values(premise.term, mid)
            candidate &= (values >= premise.lower - delta) & (values <= premise.upper + delta)
        enc = cond.conclusion.enclose(lo, hi)
        discard |= enc.hi < 0.0
        candidate &= _point_values(cond.conclusion, mid) >= -delta
    return discard, candidate & ~discard


def _split(lo: np.ndarray, hi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Halve every box along its widest edge; children stay adjacent."""
    rows = np.arange(len(lo))
    axis = np.argmax(hi - lo, axis=1)
    mid = 0.5 * (lo[rows, axis] + hi[rows, axis])
    left_hi = hi.copy()
    left_hi[rows, axis] = mid
    right_lo = lo.copy()
    right_lo[rows, axis] = mid
    n = lo.shape[1]
    return (np.stack([lo, right_lo], axis=1).reshape(-1, n),
            np.stack([left_hi, hi], axis=1).reshape(-1, n))


def check_condition(cond: Condition, delta: float, budget: int = 200_000,
                    threads: int = 1, chunk_size: int = CHUNK_SIZE) -> Verdict:
    """
    Decide a condition up to δ.

    Returns a Verdict that is ``proved`` (sound up to outward rounding),
    ``counterexample`` (witness midpoint satisfies the δ-weakened premises
    and conclusion ≥ −δ) or ``unknown`` (more than ``budget`` boxes).

    Raises:
        VerificationError: δ ≤ 0 or budget < 1
    """
    if not delta > 0.0:
        raise VerificationError(f"delta must be positive, got {delta}")
    if budget < 1:
        raise VerificationError("budget must be at least one box")
    start = time.perf_counter()
    lo = cond.domain.lo[None, :].copy()
    hi = cond.domain.hi[None, :].copy()
    processed = 0

    def finish(outcome: VerdictOutcome, witness: Optional[np.ndarray] = None,
               box: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> Verdict:
        elapsed = 1000.0 * (time.perf_counter() - start)
        verdict = Verdict(
            condition=cond.name,
            outcome=outcome,
            delta=delta,
            boxes=processed,
            time_ms=elapsed,
            witness=None if witness is None else witness.tolist(),
            witness_box=None if box is None else np.stack(box, axis=1).tolist(),
        )
        logger.info("%s: %s after %d boxes (%.1f ms)", cond.name, outcome.value, processed, elapsed)
        return verdict

    def classify(chunk: Tuple[np.ndarray, np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
        return _classify(cond, delta, *chunk)

    executor = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        while len(lo):
            if processed + len(lo) > budget:
                logger.warning("%s: box budget %d exhausted with %d boxes pending",
                               cond.name, budget, len(lo))
                return finish(VerdictOutcome.UNKNOWN)
            chunks = [(lo[i:i + chunk_size], hi[i:i + chunk_size]) for i in range(0, len(lo), chunk_size)]
            results = list(executor.map(classify, chunks)) if executor else [classify(c) for c in chunks]
            discard = np.concatenate([r[0] for r in results])
            witness = np.concatenate([r[1] for r in results])
            processed += len(lo)
            hits = np.flatnonzero(witness)
            if hits.size:
                i = hits[0]
                return finish(VerdictOutcome.COUNTEREXAMPLE, 0.5 * (lo[i] + hi[i]), (lo[i], hi[i]))
            keep = ~discard
            lo, hi = _split(lo[keep], hi[keep])
    finally:
        if executor is not None:
            executor.shutdown()
    return finish(VerdictOutcome.PROVED)


def condition_violations(cond: Condition, X: np.ndarray, delta: float = 0.0) -> np.ndarray:
    """Points of X (outside exclusions, premises within δ) where the conclusion is not negative."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    mask = np.all((X >= cond.domain.lo) & (X <= cond.domain.hi), axis=1)
    with np.errstate(invalid="ignore"):
        for exclusion in cond.exclusions:
            values = _point_values(exclusion.term, X)
            mask &= values > exclusion.level if exclusion.strict else values >= exclusion.level
        for premise in cond.premises:
            values = _point_values(premise.term, X)
            mask &= (values >= premise.lower - delta) & (values <= premise.upper + delta)
        mask &= _point_values(cond.conclusion, X) >= 0.0
    return X[mask]


def sample_violations(cond: Condition, samples: int = 1_000_000, seed: int = 0,
                      delta: float = 0.0, batch: int = 100_000) -> np.ndarray:
    """Random-sampling oracle: violating points among uniform samples of the domain."""
    rng = np.random.default_rng(seed)
    found: List[np.ndarray] = []
    remaining = samples
    while remaining > 0:
        count = min(batch, remaining)
        found.append(condition_violations(cond, cond.domain.sample(rng, count), delta))
        remaining -= count
    return np.concatenate(found) if found else np.zeros((0, cond.domain.dim))


# =============================================================================
# Condition builders
# =============================================================================

def lyapunov_condition(name: str, fn: LevelFunction, field: VectorField, level: float,
                       domain: Box, exclusions: Sequence[Exclusion] = ()) -> Condition:
    """fn ≤ level ⇒ ∇fn·F < 0."""
    return Condition(
        name=name,
        premises=(Constraint(LevelTerm(fn), upper=level),),
        conclusion=LieDerivativeTerm(fn, field, name="dV"),
        domain=domain,
        exclusions=tuple(exclusions),
    )


def clf_condition(name: str, fn: LevelFunction, sys: ControlAffineSystem, domain: Box,
                  lower: float = 0.0, upper: float = np.inf,
                  exclusions: Sequence[Exclusion] = ()) -> Condition:
    """∇fn·g = 0 ∧ lower ≤ fn ≤ upper ⇒ ∇fn·f < 0; the lower level becomes an exclusion."""
    premises = [Constraint(term, 0.0, 0.0) for term in input_lie_terms(fn, sys)]
    if np.isfinite(upper):
        premises.append(Constraint(LevelTerm(fn), upper=upper))
    excluded = list(exclusions)
    if lower > 0.0:
        excluded.append(Exclusion(LevelTerm(fn), lower))
    return Condition(
        name=name,
        premises=tuple(premises),
        conclusion=LieDerivativeTerm(fn, ExpressionField(sys.f, sys.n), name="a"),
        domain=domain,
        exclusions=tuple(excluded),
    )


def global_clf_condition(fn: LevelFunction, sys: ControlAffineSystem, radius: float = 1e-2,
                         domain: Optional[Box] = None) -> Condition:
    """CLF condition on the whole box minus a small ball around the origin."""
    return clf_condition("global", fn, sys, domain or sys.domain,
                         exclusions=(origin_ball(sys.n, radius),))


def containment_condition(name: str, inner: LevelFunction, inner_level: float,
                          outer: LevelFunction, outer_level: float, domain: Box) -> Condition:
    """inner ≤ inner_level ⇒ outer − outer_level < 0."""
    return Condition(
        name=name,
        premises=(Constraint(LevelTerm(inner), upper=inner_level),),
        conclusion=LevelTerm(outer, offset=outer_level),
        domain=domain,
    )


# =============================================================================
# Bisection
# =============================================================================

def bisect_level(check: Callable[[float], Verdict], lower: float, upper: float,
                 tolerance: float = 1e-3, lower_verified: bool = True,
                 max_steps: int = BISECTION_STEPS) -> Tuple[Optional[float], List[Verdict]]:
    """
    Largest verified level in [lower, upper], assuming verified levels are
    downward closed.

    The upper end is tried first; bisection stops once the bracket is
    within ``tolerance`` relative to its upper end. Returns None when no
    level verifies and ``lower`` was not known to verify.
    """
    verdicts: List[Verdict] = []
    top = check(upper)
    verdicts.append(top)
    if top.proved:
        return upper, verdicts
    best = lower if lower_verified else None
    lo, hi = lower, upper
    for _ in range(max_steps):
        if hi - lo <= tolerance * abs(hi):
            break
        mid = 0.5 * (lo + hi)
        verdict = check(mid)
        verdicts.append(verdict)
        logger.debug("bisection: level %.6g %s", mid, verdict.outcome.value)
        if verdict.proved:
            lo = best = mid
        else:
            hi = mid
    return best, verdicts


# =============================================================================
# Origin certificates
# =============================================================================

@dataclass(frozen=True)
class OriginBall:
    """
    V_P = xᵀPx decreases along the field on ‖x‖ ≤ radius, so every
    sublevel set {V_P < level} with level = λmin(P)·radius² is invariant
    and attracted to the origin.
    """
    radius: float
    level: float
    method: str


def inscribed_radius(domain: Box) -> float:
    """Radius of the largest origin-centred ball inside the box."""
    return float(np.min(np.minimum(-domain.lo, domain.hi)))


def _largest_radius(ok: Callable[[float], bool], r_max: float) -> Optional[float]:
    if ok(r_max):
        return r_max
    lo, hi = 0.0, r_max
    found = None
    for _ in range(RADIUS_STEPS):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = found = mid
        else:
            hi = mid
    return found


def polynomial_ball_radius(P: np.ndarray, field: Sequence, n: int, margin: float,
                           r_max: float) -> Optional[float]:
    """
    Radius from the expansion ∇V_P·F = xᵀMx + tail for polynomial fields.

    Each tail monomial c·x^α of degree d is bounded by |c|·r^(d−2)·‖x‖² on
    the ball, and the ball is accepted while the tail bound stays below
    ``margin``·|λmax(M)|. Returns None for non-polynomial fields or an
    indefinite quadratic part.
    """
    V = ExpressionFunction.quadratic(P)
    poly = to_polynomial(dot(V.gradient_expressions, list(field)), n)
    if poly is None:
        return None
    M = np.zeros((n, n))
    tail = {}
    for mono, coefficient in poly.items():
        degree = sum(mono)
        if degree < 2:
            if abs(coefficient) > 1e-12:
                return None
        elif degree == 2:
            idx = [i for i, e in enumerate(mono) for _ in range(e)]
            i, j = idx
            if i == j:
                M[i, i] += coefficient
            else:
                M[i, j] += 0.5 * coefficient
                M[j, i] += 0.5 * coefficient
        else:
            tail[degree] = tail.get(degree, 0.0) + abs(coefficient)
    lam = float(np.linalg.eigvalsh(M)[-1])
    if not lam < 0.0:
        return None
    bound = margin * abs(lam)

    def ok(r: float) -> bool:
        return sum(c * r ** (d - 2) for d, c in tail.items()) <= bound

    return _largest_radius(ok, r_max)


def jacobian_ball_radius(P: np.ndarray, field: VectorField, margin: float,
                         r_max: float) -> Optional[float]:
    """
    Radius from an interval Jacobian J over the cube [−r, r]ⁿ.

    F(x) = Ĵx with Ĵ in the interval hull of J whenever F(0) = 0, so
    ∇V_P·F = xᵀ(PĴ + ĴᵀP)x. The cube is accepted when
    λmax(S_mid) + ‖S_rad‖₂ ≤ (1 − margin)·λ₀ for S = JᵀP + PJ, with λ₀
    the value at the origin.
    """
    n = P.shape[0]

    def bound(r: float) -> float:
        lo = np.full((1, n), -r)
        hi = np.full((1, n), r)
        J = field.enclose_jacobian(lo, hi)[0]
        A = J.moveaxis(0, 1).matmul(P)                        # JᵀP
        S = A + A.moveaxis(0, 1)
        if not np.all(S.is_finite()):
            return np.inf
        mid, rad = S.mid_rad()
        mid = 0.5 * (mid + mid.T)
        return float(np.linalg.eigvalsh(mid)[-1] + np.linalg.norm(rad, 2))

    lam0 = bound(0.0)
    if not lam0 < 0.0:
        return None
    return _largest_radius(lambda r: bound(r) <= (1.0 - margin) * lam0, r_max)


def origin_certificate(P: np.ndarray, field: VectorField, domain: Box,
                       margin: float = 0.5) -> Optional[OriginBall]:
    """Ball around the origin where V_P decreases along the field, or None."""
    P = np.atleast_2d(np.asarray(P, dtype=np.float64))
    n = P.shape[0]
    r_max = inscribed_radius(domain)
    if not r_max > 0.0:
        return None
    radius, method = None, "jacobian"
    expressions = getattr(field, "expressions", None)
    if expressions is not None:
        radius = polynomial_ball_radius(P, expressions, n, margin, r_max)
        method = "polynomial"
    if radius is None:
        radius = jacobian_ball_radius(P, field, margin, r_max)
        method = "jacobian"
    if radius is None or radius <= 0.0:
        return None
    level = float(np.linalg.eigvalsh(P)[0]) * radius * radius * (1.0 - 1e-12)
    logger.info("origin ball (%s): radius %.4g, level %.4g", method, radius, level)
    return OriginBall(radius=radius, level=level, method=method)


# =============================================================================
# Boundary levels
# =============================================================================

def quadratic_boundary_minimum(P: np.ndarray, domain: Box) -> float:
    """min over the box faces' hyperplanes of xᵀPx: min_i b_i²/(P⁻¹)_ii."""
    P_inv = np.linalg.inv(np.atleast_2d(np.asarray(P, dtype=np.float64)))
    diag = np.diag(P_inv)
    values = np.minimum(domain.lo ** 2, domain.hi ** 2) / diag
    return float(np.min(values)) * (1.0 - 1e-12)


def boundary_minimum(fn: LevelFunction, domain: Box, tolerance: float = 1e-3,
                     budget: int = 50_000) -> float:
    """
    Rigorous lower bound of fn over the boundary of the box.

    Branch and bound on every face: boxes whose enclosure cannot beat the
    best sampled value by more than the tolerance are retired.
    """
    result = np.inf
    for face in domain.faces():
        lo, hi = face.lo[None, :].copy(), face.hi[None, :].copy()
        best = np.inf
        retired = np.inf
        processed = 0
        while len(lo):
            enc = fn.enclose(lo, hi)
            values = np.atleast_1d(fn.value(0.5 * (lo + hi)))
            best = min(best, float(np.nanmin(values)) if np.any(np.isfinite(values)) else np.inf)
            slack = tolerance * max(abs(best), 1.0) if np.isfinite(best) else 0.0
            done = enc.lo >= best - slack
            if np.any(done):
                retired = min(retired, float(np.min(enc.lo[done])))
            processed += len(lo)
            lo, hi = lo[~done], hi[~done]
            if not len(lo):
                break
            if processed + 2 * len(lo) > budget:
                retired = min(retired, float(np.min(enc.lo[~done])))
                break
            lo, hi = _split(lo, hi)
        result = min(result, retired)
    return float(result)


def default_level_cap(fn: LevelFunction, domain: Box, tolerance: float = 1e-3) -> float:
    """Boundary minimum of a transformed level function, kept below 1."""
    return min(boundary_minimum(fn, domain, tolerance), BELOW_ONE)


# =============================================================================
# Drivers
# =============================================================================

def _settings(config: Optional[VerifyConfig], n: int, delta: Optional[float]) -> Tuple[VerifyConfig, float]:
    config = config or VerifyConfig()
    return config, delta if delta is not None else config.delta_for(n)


def verify_quadratic(sys: ControlAffineSystem, cert: QuadraticCertificate,
                     c_max: Optional[float] = None, delta: Optional[float] = None,
                     config: Optional[VerifyConfig] = None, threads: int = 1,
                     verdicts: Optional[List[Verdict]] = None) -> QuadraticCertificate:
    """
    Two-stage verification of V_P = xᵀPx.

    Stage A finds the largest c_P1 such that V_P is a Lyapunov function of
    the LQR closed loop on {V_P ≤ c_P1}; an origin ball certificate covers
    the neighbourhood of the origin. Stage B first tries the CLF condition
    on the whole domain outside {V_P < c_P1}; if that fails it bisects the
    largest c_P in (c_P1, c_max].

    Raises:
        CertificateRejectedError: the closed loop cannot be certified near
            the origin
    """
    config, delta = _settings(config, sys.n, delta)
    collected = verdicts if verdicts is not None else []
    P = cert.P_matrix
    V = ExpressionFunction.quadratic(P)
    c_max = c_max or config.c_max or quadratic_boundary_minimum(P, sys.domain)
    if not c_max > 0.0:
        raise VerificationError(f"c_max must be positive, got {c_max}")

    field = closed_loop_field(sys, LinearFeedback(cert.K_matrix))
    ball = origin_certificate(P, field, sys.domain, config.origin_margin)
    if ball is None:
        raise CertificateRejectedError("V_P is not a Lyapunov function of the LQR closed loop near the origin")
    c_ball = min(ball.level, c_max)

    def stage_a(c: float) -> Verdict:
        cond = lyapunov_condition("stage_a", V, field, c, sys.domain, (Exclusion(LevelTerm(V), c_ball),))
        verdict = check_condition(cond, delta, config.budget, threads).model_copy(update={"c": c})
        collected.append(verdict)
        return verdict

    c_P1, _ = bisect_level(stage_a, c_ball, c_max, config.tolerance, lower_verified=True)
    logger.info("Stage A: c_P1 = %.6g (origin ball level %.6g)", c_P1, c_ball)

    glob = check_condition(clf_condition("global", V, sys, sys.domain, lower=c_P1), delta,
                           config.budget, threads).model_copy(update={"c": c_max})
    collected.append(glob)
    if glob.proved:
        logger.info("CLF condition holds on the whole domain; c_P = c_max = %.6g", c_max)
        return cert.model_copy(update={"c_P1": c_P1, "c_P": c_max, "global_on_domain": True})

    def stage_b(c: float) -> Verdict:
        cond = clf_condition("stage_b", V, sys, sys.domain, lower=c_P1, upper=c)
        verdict = check_condition(cond, delta, config.budget, threads).model_copy(update={"c": c})
        collected.append(verdict)
        return verdict

    c_P, _ = bisect_level(stage_b, c_P1, c_max, config.tolerance, lower_verified=True)
    logger.info("Stage B: c_P = %.6g", c_P)
    return cert.model_copy(update={"c_P1": c_P1, "c_P": c_P, "global_on_domain": False})


def verify_neural(sys: ControlAffineSystem, net, cert: QuadraticCertificate,
                  c_max: Optional[float] = None, delta: Optional[float] = None,
                  config: Optional[VerifyConfig] = None, threads: int = 1,
                  verdicts: Optional[List[Verdict]] = None) -> NeuralLevels:
    """
    Levels c1 < c2 of a neural (or synthetic) CLF W.

    c1 is the largest level with {W ≤ c1} inside {V_P < c_P}; c2 the
    largest level in (c1, c_max] where the CLF condition holds on
    c1 ≤ W ≤ c2, or None when no level above c1 is proved. c_max
    defaults to a rigorous lower bound of W on the domain boundary, kept
    below 1.

    Raises:
        NeuralVerificationError: no c1 verifies
    """
    config, delta = _settings(config, sys.n, delta)
    collected = verdicts if verdicts is not None else []
    W = level_function(net, config.mean_value)
    V = ExpressionFunction.quadratic(cert.P_matrix)
    cap = default_level_cap(W, sys.domain, config.tolerance)
    c_max = min(c_max or config.c_max or cap, BELOW_ONE)

    def containment(c: float) -> Verdict:
        cond = containment_condition("containment", W, c, V, cert.c_P, sys.domain)
        verdict = check_condition(cond, delta, config.budget, threads).model_copy(update={"c": c})
        collected.append(verdict)
        return verdict

    c1, _ = bisect_level(containment, 0.0, cap, config.tolerance, lower_verified=False)
    if c1 is None or c1 <= 0.0:
        raise NeuralVerificationError(
            "no level c1 with {W <= c1} inside {V_P <= c_P}; the network is likely undertrained"
        )
    logger.info("containment: c1 = %.6g", c1)
    if c_max <= c1:
        logger.warning("c_max = %.6g does not exceed c1 = %.6g; no c2 range to verify", c_max, c1)
        return NeuralLevels(c1=c1, c2=None, c_max=c_max)

    def clf(c: float) -> Verdict:
        cond = clf_condition("neural_clf", W, sys, sys.domain, lower=c1, upper=c)
        verdict = check_condition(cond, delta, config.budget, threads).model_copy(update={"c": c})
        collected.append(verdict)
        return verdict

    c2, _ = bisect_level(clf, c1, c_max, config.tolerance, lower_verified=False)
    if c2 is None:
        logger.warning("CLF condition fails on every level in (%.6g, %.6g]; c2 is not verified", c1, c_max)
        return NeuralLevels(c1=c1, c2=None, c_max=c_max)
    logger.info("neural CLF: c2 = %.6g", c2)
    return NeuralLevels(c1=c1, c2=c2, c_max=c_max)


def verify_closed_loop_roa(sys: ControlAffineSystem, cost: CostSpec, net,
                           cert: QuadraticCertificate, controller=None,
                           upper: Optional[float] = None, delta: Optional[float] = None,
                           config: Optional[VerifyConfig] = None, threads: int = 1,
                           verdicts: Optional[List[Verdict]] = None) -> Optional[float]:
    """
    Largest c such that W decreases along ẋ = f + g·k on {W ≤ c}.

    The controller defaults to the HJB feedback of W. Near the origin V_P
    takes over: an origin ball certificate for the same closed loop gives
    the excluded region {V_P < level}. Returns None when no level verifies.

    Raises:
        VerificationError: the closed loop cannot be certified near the origin
    """
    config, delta = _settings(config, sys.n, delta)
    collected = verdicts if verdicts is not None else []
    W = level_function(net, config.mean_value)
    if controller is None:
        controller = HJBFeedback(W, sys, cost)
    field = closed_loop_field(sys, controller)
    ball = origin_certificate(cert.P_matrix, field, sys.domain, config.origin_margin)
    if ball is None:
        raise VerificationError("closed loop cannot be certified near the origin")
    exclusion = Exclusion(LevelTerm(ExpressionFunction.quadratic(cert.P_matrix)), ball.level)
    if isinstance(controller, HJBFeedback):
        conclusion: Term = NeuralClosedLoopTerm(controller)
    else:
        conclusion = LieDerivativeTerm(W, field, name="dW")
    top = upper if upper is not None else default_level_cap(W, sys.domain, config.tolerance)

    def roa(c: float) -> Verdict:
        cond = Condition("roa", (Constraint(LevelTerm(W), upper=c),), conclusion, sys.domain, (exclusion,))
        verdict = check_condition(cond, delta, config.budget, threads).model_copy(update={"c": c})
        collected.append(verdict)
        return verdict

    level, _ = bisect_level(roa, 0.0, top, config.tolerance, lower_verified=False)
    if level is None:
        logger.warning("no closed-loop ROA level verified")
    else:
        logger.info("closed-loop ROA: c = %.6g", level)
    return level


# =============================================================================
# Monte-Carlo areas
# =============================================================================

def levelset_area(fn, level: float, box: Box, samples: int = 200_000, seed: int = 0,
                  batch: int = 100_000) -> float:
    """Monte-Carlo measure of {x ∈ box : fn(x) ≤ level}."""
    rng = np.random.default_rng(seed)
    value = fn.value if hasattr(fn, "value") else fn.forward
    inside = 0
    remaining = samples
    while remaining > 0:
        count = min(batch, remaining)
        inside += int(np.count_nonzero(np.atleast_1d(value(box.sample(rng, count))) <= level))
        remaining -= count
    return float(np.prod(box.widths)) * inside / samples
