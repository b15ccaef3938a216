"""
SMT-LIB2 emission of verification conditions.

The emitted query asserts the NEGATION of a condition, so ``unsat`` from a
complete solver proves it. Constants are written as exact rationals of the
binary floats. In the default ``polynomial`` mode sin, cos, tanh and exp
are replaced by fresh variables constrained by sound polynomial bounds and
sqrt by its exact algebraic definition, which keeps queries in QF_NRA;
``native`` mode writes the function symbols for δ-complete solvers.
"""

import shlex
import subprocess
import time
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Union

import numpy as np

from .errors import SmtEmissionError
from .expr import Add, Const, Div, Expression, Func, Mul, Neg, Pow, Sub, Var, sum_of, var
from .levelfn import ExpressionTerm, LevelFunction
from .logging_config import get_logger
from .models import Verdict, VerdictOutcome
from .system import ControlAffineSystem
from .verify import Condition, Exclusion, clf_condition

logger = get_logger(__name__)

SUPPORTED_LOGICS = ("QF_NRA", "QF_LRA", "QF_NRAT", "ALL")
TRANSCENDENTAL_MODES = ("polynomial", "native")


def rational(value: float) -> str:
    """Exact SMT-LIB2 literal of a finite float."""
    if not np.isfinite(value):
        raise SmtEmissionError(f"constant {value} has no SMT-LIB2 literal")
    q = Fraction(float(value))
    body = str(abs(q.numerator)) if q.denominator == 1 else f"(/ {abs(q.numerator)} {q.denominator})"
    return f"(- {body})" if q < 0 else body


def _is_constant(e: Expression) -> bool:
    return isinstance(e, Const)


class _Emitter:
    """Renders expressions, naming shared sub-terms and transcendental atoms."""

    def __init__(self, n: int, logic: str, transcendental: str):
        self.n = n
        self.logic = logic
        self.transcendental = transcendental
        self.definitions: List[str] = []
        self.auxiliary: List[str] = []
        self.side: List[str] = []
        self._names: Dict[Expression, str] = {}
        self._uses: Dict[Expression, int] = {}

    def count(self, e: Expression) -> None:
        self._uses[e] = self._uses.get(e, 0) + 1
        if self._uses[e] == 1:
            for child in e.children():
                self.count(child)

    def _linear_only(self) -> bool:
        return self.logic == "QF_LRA"

    def _fresh(self, prefix: str) -> str:
        name = f"{prefix}{len(self.auxiliary) + 1}"
        self.auxiliary.append(name)
        return name

    def render(self, e: Expression) -> str:
        if e in self._names:
            return self._names[e]
        text = self._render_node(e)
        if self._uses.get(e, 0) > 1 and not isinstance(e, (Const, Var)) and not text.isidentifier():
            name = f"t{len(self.definitions) + 1}"
            self.definitions.append(f"(define-fun {name} () Real {text})")
            text = name
        self._names[e] = text
        return text

    def _render_node(self, e: Expression) -> str:
        if isinstance(e, Const):
            return rational(e.value)
        if isinstance(e, Var):
            if e.index >= self.n:
                raise SmtEmissionError(f"variable x{e.index + 1} beyond the declared {self.n} states")
            return f"x{e.index + 1}"
        if isinstance(e, Add):
            return f"(+ {self.render(e.left)} {self.render(e.right)})"
        if isinstance(e, Sub):
            return f"(- {self.render(e.left)} {self.render(e.right)})"
        if isinstance(e, Neg):
            return f"(- {self.render(e.arg)})"
        if isinstance(e, Mul):
            if self._linear_only() and not (_is_constant(e.left) or _is_constant(e.right)):
                raise SmtEmissionError("nonlinear product is not expressible in QF_LRA")
            return f"(* {self.render(e.left)} {self.render(e.right)})"
        if isinstance(e, Div):
            if self._linear_only() and not _is_constant(e.right):
                raise SmtEmissionError("division by a non-constant is not expressible in QF_LRA")
            return f"(/ {self.render(e.left)} {self.render(e.right)})"
        if isinstance(e, Pow):
            if e.exponent == 0:
                return "1"
            if e.exponent == 1:
                return self.render(e.base)
            if self._linear_only():
                raise SmtEmissionError("powers are not expressible in QF_LRA")
            base = self.render(e.base)
            return "(* " + " ".join([base] * e.exponent) + ")"
        if isinstance(e, Func):
            return self._function(e)
        raise SmtEmissionError(f"unsupported node {type(e).__name__}")

    def _function(self, e: Func) -> str:
        if self._linear_only():
            raise SmtEmissionError(f"{e.name} is not expressible in QF_LRA")
        y = self.render(e.arg)
        if e.name == "sqrt":
            s = self._fresh("s")
            self.side.append(f"(>= {s} 0)")
            self.side.append(f"(= (* {s} {s}) {y})")
            return s
        if self.transcendental == "native":
            return f"({e.name} {y})"
        t = self._fresh(e.name[0] + "f")
        y2 = f"(* {y} {y})"
        y6 = f"(* {y2} {y2} {y2})"
        remainder = f"(/ {y6} 720)"
        if e.name == "sin":
            # |sin y − (y − y³/6 + y⁵/120)| ≤ y⁶/720
            taylor = f"(+ (- {y} (/ (* {y} {y2}) 6)) (/ (* {y} {y2} {y2}) 120))"
            self._band(t, taylor, remainder)
        elif e.name == "cos":
            # |cos y − (1 − y²/2 + y⁴/24)| ≤ y⁶/720
            taylor = f"(+ (- 1 (/ {y2} 2)) (/ (* {y2} {y2}) 24))"
            self._band(t, taylor, remainder)
        elif e.name == "tanh":
            self.side.append(f"(< {t} 1)")
            self.side.append(f"(> {t} (- 1))")
            self.side.append(f"(>= (* {t} {y}) 0)")
            self.side.append(f"(<= (* {t} {t}) {y2})")
            # tanh y lies between y − y³/3 and y on each half-line
            self.side.append(f"(>= (* {y} (- {t} (- {y} (/ (* {y} {y2}) 3)))) 0)")
        elif e.name == "exp":
            self.side.append(f"(> {t} 0)")
            self.side.append(f"(>= {t} (+ 1 {y}))")
            self.side.append(f"(=> (>= {y} 0) (>= {t} (+ 1 {y} (/ {y2} 2))))")
            self.side.append(f"(=> (<= {y} 0) (<= (* {t} (- 1 {y})) 1))")
        else:
            raise SmtEmissionError(f"function {e.name} has no polynomial encoding")
        return t

    def _band(self, t: str, center: str, radius: str) -> None:
        self.side.append(f"(<= {t} 1)")
        self.side.append(f"(>= {t} (- 1))")
        self.side.append(f"(<= (- {t} {center}) {radius})")
        self.side.append(f"(>= (- {t} {center}) (- {radius}))")


def _expression(term, role: str) -> Expression:
    expression = getattr(term, "expression", None)
    if expression is None:
        raise SmtEmissionError(f"{role} '{term.name}' has no symbolic form (neural terms cannot be emitted)")
    return expression


def emit_smtlib(cond: Condition, logic: str = "QF_NRA", transcendental: str = "polynomial",
                bounded: bool = True) -> str:
    """
    Query whose models are counterexamples of ``cond``.

    With ``bounded=False`` the domain box is dropped and the claim covers
    all of ℝⁿ. Output is deterministic for fixed input.

    Raises:
        SmtEmissionError: unknown logic, an operator the logic cannot
            express, or a term without a symbolic form
    """
    if logic not in SUPPORTED_LOGICS:
        raise SmtEmissionError(f"unsupported logic '{logic}', expected one of {', '.join(SUPPORTED_LOGICS)}")
    if transcendental not in TRANSCENDENTAL_MODES:
        raise SmtEmissionError(f"transcendental mode must be one of {', '.join(TRANSCENDENTAL_MODES)}")
    n = cond.domain.dim
    emitter = _Emitter(n, logic, transcendental)
    exclusions = [(_expression(x.term, "exclusion"), x) for x in cond.exclusions]
    premises = [(_expression(p.term, "premise"), p) for p in cond.premises]
    conclusion = _expression(cond.conclusion, "conclusion")
    for e, _ in exclusions + premises:
        emitter.count(e)
    emitter.count(conclusion)

    assertions: List[str] = []
    if bounded:
        for i, (lo, hi) in enumerate(zip(cond.domain.lower, cond.domain.upper)):
            assertions.append(f"(<= {rational(lo)} x{i + 1})")
            assertions.append(f"(<= x{i + 1} {rational(hi)})")
    for e, exclusion in exclusions:
        op = ">" if exclusion.strict else ">="
        assertions.append(f"({op} {emitter.render(e)} {rational(exclusion.level)})")
    for e, premise in premises:
        text = emitter.render(e)
        if premise.lower == premise.upper:
            assertions.append(f"(= {text} {rational(premise.lower)})")
            continue
        if np.isfinite(premise.lower):
            assertions.append(f"(>= {text} {rational(premise.lower)})")
        if np.isfinite(premise.upper):
            assertions.append(f"(<= {text} {rational(premise.upper)})")
    assertions.append(f"(>= {emitter.render(conclusion)} 0)")

    lines = [
        f"; {cond.describe()}",
        "; negated condition: unsat proves it, a model is a counterexample",
        f"(set-logic {logic})",
    ]
    lines += [f"(declare-fun x{i + 1} () Real)" for i in range(n)]
    lines += [f"(declare-fun {name} () Real)" for name in emitter.auxiliary]
    lines += emitter.definitions
    lines += [f"(assert {a})" for a in emitter.side + assertions]
    lines += ["(check-sat)", "(exit)", ""]
    return "\n".join(lines)


def write_smtlib(cond: Condition, directory: Union[str, Path], logic: str = "QF_NRA",
                 transcendental: str = "polynomial", bounded: bool = True) -> Path:
    """Write ``<directory>/<condition name>.smt2``."""
    path = Path(directory) / f"{cond.name}.smt2"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(emit_smtlib(cond, logic, transcendental, bounded), encoding="utf-8")
    logger.info("Wrote SMT-LIB2 query %s", path)
    return path


def global_condition(fn: LevelFunction, sys: ControlAffineSystem, name: str = "global") -> Condition:
    """∇V·g = 0 ∧ x ≠ 0 ⇒ ∇V·f < 0, for unbounded emission."""
    norm_sq = sum_of(var(i) * var(i) for i in range(sys.n))
    origin = Exclusion(ExpressionTerm(norm_sq, name="|x|^2"), 0.0, strict=True)
    return clf_condition(name, fn, sys, sys.domain, exclusions=(origin,))


# =============================================================================
# External solver
# =============================================================================

@dataclass(frozen=True)
class SolverResult:
    status: str
    output: str
    time_ms: float


def run_solver(path: Union[str, Path], command: str, timeout: float = 60.0) -> SolverResult:
    """
    Run ``<command> <path>`` and read sat/unsat/unknown from its output.

    A missing executable, a timeout or unparsable output give status "error"
    or "unknown"; nothing is raised.
    """
    argv = shlex.split(command) + [str(path)]
    start = time.perf_counter()
    try:
        completed = subprocess.run(argv, capture_output=True, text=True, timeout=timeout, check=False)
    except FileNotFoundError:
        logger.error("SMT solver '%s' not found", argv[0])
        return SolverResult("error", "", 0.0)
    except subprocess.TimeoutExpired:
        elapsed = 1000.0 * (time.perf_counter() - start)
        logger.warning("SMT solver timed out after %.0f ms on %s", elapsed, path)
        return SolverResult("unknown", "", elapsed)
    elapsed = 1000.0 * (time.perf_counter() - start)
    output = completed.stdout.strip()
    first = output.split()[0] if output else ""
    status = first if first in ("sat", "unsat", "unknown") else "error"
    if status == "error":
        logger.error("SMT solver output not understood: %s", (output or completed.stderr)[:200])
    return SolverResult(status, output, elapsed)


def solver_verdict(cond: Condition, result: SolverResult) -> Verdict:
    """unsat → proved, sat → counterexample, anything else → unknown."""
    outcome = {
        "unsat": VerdictOutcome.PROVED,
        "sat": VerdictOutcome.COUNTEREXAMPLE,
    }.get(result.status, VerdictOutcome.UNKNOWN)
    return Verdict(condition=cond.name, outcome=outcome, delta=0.0, time_ms=result.time_ms,
                   method="smtlib:external")


def check_external(cond: Condition, directory: Union[str, Path], command: str,
                   logic: str = "QF_NRA", transcendental: str = "polynomial",
                   bounded: bool = True, timeout: float = 60.0) -> Verdict:
    """Emit, run the solver and convert its answer."""
    path = write_smtlib(cond, directory, logic, transcendental, bounded)
    return solver_verdict(cond, run_solver(path, command, timeout))


def describe_external(verdict: Verdict) -> str:
    """Report line such as ``global: proved (external)``."""
    return f"{verdict.condition}: {verdict.outcome.value} (external)"

