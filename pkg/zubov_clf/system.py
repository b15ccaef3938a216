"""
Control-affine systems ẋ = f(x) + g(x)u, running costs, and the benchmark registry.
"""

import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import (
    ExpressionEvaluationError,
    ExpressionSyntaxError,
    SystemDefinitionError,
    UnknownBenchmarkError,
)
from .expr import (
    Const,
    Expression,
    Program,
    Var,
    add,
    compile_vector,
    differentiate,
    jacobian,
    mul,
    parse_expression,
    quadratic_form,
    sum_of,
    to_infix,
    variables,
)
from .interval import Box
from .logging_config import get_logger
from .storage import read_mapping

logger = get_logger(__name__)

ORIGIN_TOLERANCE = 1e-12


# =============================================================================
# Models
# =============================================================================

@dataclass(frozen=True)
class ControlAffineSystem:
    """
    Control-affine dynamics ẋ = f(x) + g(x)u on a verification domain.

    Attributes:
        name: Identifier used in reports and file names
        f: Drift, n expressions in x1..xn
        g: Input matrix, n rows of k expressions in x1..xn
        domain: Verification (and collocation) box
        data_domain: Box for PMP initial conditions (defaults to domain)
    """
    name: str
    f: Tuple[Expression, ...]
    g: Tuple[Tuple[Expression, ...], ...]
    domain: Box
    data_domain: Optional[Box] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "f", tuple(self.f))
        object.__setattr__(self, "g", tuple(tuple(row) for row in self.g))
        n = len(self.f)
        if n == 0:
            raise SystemDefinitionError("system needs at least one state")
        if len(self.g) != n:
            raise SystemDefinitionError(f"g has {len(self.g)} rows, expected {n}")
        k = len(self.g[0])
        if k == 0 or any(len(row) != k for row in self.g):
            raise SystemDefinitionError("g rows must all have the same non-zero length")
        for e in self.f + tuple(e for row in self.g for e in row):
            if any(i >= n for i in variables(e)):
                raise SystemDefinitionError(
                    f"expression '{to_infix(e)}' references a variable beyond x{n}"
                )
        if self.domain.dim != n:
            raise SystemDefinitionError(f"domain has dimension {self.domain.dim}, expected {n}")
        if self.data_domain is not None and not self.domain.contains_box(self.data_domain):
            raise SystemDefinitionError("data domain must lie inside the verification domain")
        try:
            f0 = self.drift(np.zeros(n))
        except ExpressionEvaluationError as e:
            raise SystemDefinitionError(f"drift cannot be evaluated at the origin: {e}") from e
        if np.max(np.abs(f0)) > ORIGIN_TOLERANCE:
            raise SystemDefinitionError(f"f(0) = {f0.tolist()} but the origin must be an equilibrium")

    @property
    def n(self) -> int:
        return len(self.f)

    @property
    def k(self) -> int:
        return len(self.g[0])

    @property
    def sample_domain(self) -> Box:
        return self.data_domain if self.data_domain is not None else self.domain

    @cached_property
    def drift_program(self) -> Program:
        return compile_vector(self.f)

    @cached_property
    def input_program(self) -> Program:
        return compile_vector([e for row in self.g for e in row])

    def drift(self, x: np.ndarray) -> np.ndarray:
        """f at one point (n,) or many points (m, n)."""
        return self.drift_program.evaluate(x)

    def input_matrix(self, x: np.ndarray) -> np.ndarray:
        """g at one point (n, k) or many points (m, n, k)."""
        values = self.input_program.evaluate(x)
        return values.reshape(values.shape[:-1] + (self.n, self.k))

    def vector_field(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """f(x) + g(x)u, vectorized over leading axes."""
        G = self.input_matrix(x)
        return self.drift(x) + np.einsum("...ij,...j->...i", G, np.asarray(u, dtype=np.float64))

    def g_column(self, j: int) -> Tuple[Expression, ...]:
        return tuple(row[j] for row in self.g)

    def describe(self) -> Dict[str, Any]:
        """Serializable description in the system-config format."""
        out: Dict[str, Any] = {
            "name": self.name,
            "n": self.n,
            "k": self.k,
            "f": [to_infix(e) for e in self.f],
            "g": [[to_infix(e) for e in row] for row in self.g],
            "domain": self.domain.to_list(),
        }
        if self.data_domain is not None:
            out["data_domain"] = self.data_domain.to_list()
        return out


@dataclass(frozen=True)
class CostSpec:
    """
    Running cost q(x) + uᵀR(x)u.

    Attributes:
        q: Positive definite state cost
        R: k×k symmetric matrix of expressions (positive definite)
        Q: Constant n×n matrix used for the linearized Riccati problem
    """
    q: Expression
    R: Tuple[Tuple[Expression, ...], ...]
    Q: np.ndarray = field(compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "R", tuple(tuple(row) for row in self.R))
        Q = np.asarray(self.Q, dtype=np.float64)
        object.__setattr__(self, "Q", Q)
        k = len(self.R)
        if k == 0 or any(len(row) != k for row in self.R):
            raise SystemDefinitionError("R must be a non-empty square matrix")
        for i in range(k):
            for j in range(i + 1, k):
                if self.R[i][j] != self.R[j][i]:
                    raise SystemDefinitionError(f"R is not symmetric at ({i}, {j})")
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise SystemDefinitionError("Q must be a square matrix")
        if not np.allclose(Q, Q.T, atol=1e-12):
            raise SystemDefinitionError("Q must be symmetric")
        if np.min(np.linalg.eigvalsh(Q)) < -1e-12:
            raise SystemDefinitionError("Q must be positive semidefinite")
        n = Q.shape[0]
        try:
            q0 = self.running_state_cost(np.zeros(n))
        except ExpressionEvaluationError as e:
            raise SystemDefinitionError(f"q cannot be evaluated at the origin: {e}") from e
        if abs(float(q0)) > ORIGIN_TOLERANCE:
            raise SystemDefinitionError(f"q(0) = {float(q0)} but must vanish at the origin")

    @property
    def k(self) -> int:
        return len(self.R)

    @cached_property
    def q_program(self) -> Program:
        return compile_vector([self.q])

    @cached_property
    def R_program(self) -> Program:
        return compile_vector([e for row in self.R for e in row])

    @cached_property
    def R_constant(self) -> Optional[np.ndarray]:
        """R as a matrix when every entry is a constant, else None."""
        if all(isinstance(e, Const) for row in self.R for e in row):
            return np.array([[e.value for e in row] for row in self.R])  # type: ignore[attr-defined]
        return None

    def running_state_cost(self, x: np.ndarray) -> np.ndarray:
        return self.q_program.evaluate(x)[..., 0]

    def R_matrix(self, x: np.ndarray) -> np.ndarray:
        """R at one point (k, k) or many points (m, k, k)."""
        values = self.R_program.evaluate(x)
        return values.reshape(values.shape[:-1] + (self.k, self.k))

    def running_cost(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """q(x) + uᵀR(x)u, vectorized over leading axes."""
        u = np.asarray(u, dtype=np.float64)
        return self.running_state_cost(x) + np.einsum("...i,...ij,...j->...", u, self.R_matrix(x), u)


# =============================================================================
# Operations
# =============================================================================

def linearize(sys: ControlAffineSystem) -> Tuple[np.ndarray, np.ndarray]:
    """
    Linearization at the origin.

    Returns:
        (A, B) with A[i][j] = ∂f_i/∂x_j(0) and B = g(0)
    """
    origin = np.zeros(sys.n)
    try:
        A = compile_vector([e for row in jacobian(sys.f, sys.n) for e in row]).evaluate(origin)
        B = sys.input_matrix(origin)
    except ExpressionEvaluationError as e:
        raise SystemDefinitionError(f"linearization failed at the origin: {e}") from e
    return A.reshape(sys.n, sys.n), np.asarray(B)


def closed_loop(sys: ControlAffineSystem, controller: Sequence[Expression]) -> Tuple[Expression, ...]:
    """Autonomous field f_i + Σ_j g_ij·controller_j."""
    if len(controller) != sys.k:
        raise SystemDefinitionError(f"controller has {len(controller)} components, system has {sys.k} inputs")
    for e in controller:
        if any(i >= sys.n for i in variables(e)):
            raise SystemDefinitionError(f"controller '{to_infix(e)}' references a variable beyond x{sys.n}")
    return tuple(
        add(sys.f[i], sum_of(mul(sys.g[i][j], controller[j]) for j in range(sys.k)))
        for i in range(sys.n)
    )


def linear_feedback(K: np.ndarray) -> Tuple[Expression, ...]:
    """The controller u = Kx as expressions."""
    K = np.atleast_2d(np.asarray(K, dtype=np.float64))
    return tuple(
        sum_of(mul(Const(K[j, i]), Var(i)) for i in range(K.shape[1]) if K[j, i] != 0.0)
        for j in range(K.shape[0])
    )


def quadratic_cost(Q: np.ndarray, R: np.ndarray) -> CostSpec:
    """q = xᵀQx with constant R."""
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    return CostSpec(
        q=quadratic_form(Q),
        R=tuple(tuple(Const(v) for v in row) for row in R),
        Q=Q,
    )


def _parse_all(texts: Sequence[str], n: int) -> Tuple[Expression, ...]:
    return tuple(parse_expression(t, n) for t in texts)


def _system(name: str, f: Sequence[str], g: Sequence[Sequence[str]], domain: Box,
            data_domain: Optional[Box] = None) -> ControlAffineSystem:
    n = len(f)
    return ControlAffineSystem(
        name=name,
        f=_parse_all(f, n),
        g=tuple(_parse_all(row, n) for row in g),
        domain=domain,
        data_domain=data_domain,
    )


# =============================================================================
# Benchmarks
# =============================================================================

DEFAULT_HALF_WIDTH = 10.0


def vdp_input() -> ControlAffineSystem:
    """Van der Pol oscillator with additive input on the second state."""
    return _system(
        "vdp_input",
        f=["x2", "-x1 + x2*(1 - x1^2)"],
        g=[["0"], ["1"]],
        domain=Box.cube(2, DEFAULT_HALF_WIDTH),
    )


def mass_spring_4d() -> ControlAffineSystem:
    """Two masses, stiffening wall spring, linear spring and negative damper between them."""
    return _system(
        "mass_spring_4d",
        f=[
            "x2",
            "-(x1 + 0.1*x1^3) + (x3 - x1) - 0.1*(x4 - x2)",
            "x4",
            "-(x3 - x1) + 0.1*(x4 - x2)",
        ],
        g=[["0"], ["1"], ["0"], ["0"]],
        domain=Box.cube(4, DEFAULT_HALF_WIDTH),
    )


def mass_spring_chain(masses: int) -> ControlAffineSystem:
    """
    Chain of masses driven at the first one.

    State order is (p1, v1, p2, v2, ...). Mass 1 is tied to the wall by the
    stiffening spring p1 + 0.1·p1³; neighbours are coupled by a unit linear
    spring and a damper of coefficient −0.1. With two masses this is
    exactly mass_spring_4d.
    """
    if masses < 1:
        raise SystemDefinitionError("mass_spring_chain needs at least one mass")

    def p(i: int) -> str:
        return f"x{2 * i - 1}"

    def v(i: int) -> str:
        return f"x{2 * i}"

    f: List[str] = []
    for i in range(1, masses + 1):
        forces: List[str] = []
        if i == 1:
            forces.append(f"-({p(1)} + 0.1*{p(1)}^3)")
        if i < masses:
            forces.append(f"({p(i + 1)} - {p(i)}) - 0.1*({v(i + 1)} - {v(i)})")
        if i > 1:
            forces.append(f"-({p(i)} - {p(i - 1)}) + 0.1*({v(i)} - {v(i - 1)})")
        f.append(v(i))
        f.append(" + ".join(forces) if forces else "0")
    n = 2 * masses
    g = [["1"] if row == 1 else ["0"] for row in range(n)]
    return _system(f"mass_spring_chain({masses})", f, g, Box.cube(n, DEFAULT_HALF_WIDTH))


PENDULUM_PARAMETERS: Dict[str, float] = {"g_c": 9.81, "b": 0.1, "l": 0.5, "m": 0.15}


def pendulum(g_c: float = 9.81, b: float = 0.1, l: float = 0.5, m: float = 0.15) -> ControlAffineSystem:
    """Inverted pendulum ẋ2 = (g_c/ℓ) sin x1 − b/(mℓ²) x2 + u/(mℓ²)."""
    inertia = m * l * l
    return _system(
        "pendulum",
        f=["x2", f"{g_c / l!r}*sin(x1) - {b / inertia!r}*x2"],
        g=[["0"], [repr(1.0 / inertia)]],
        domain=Box.cube(2, DEFAULT_HALF_WIDTH),
    )


def reversed_vdp() -> ControlAffineSystem:
    """Reversed Van der Pol with multiplicative input: ẋ2 = x1 + (1 + u)(x1² − 1)x2."""
    return _system(
        "reversed_vdp",
        f=["-x2", "x1 + (x1^2 - 1)*x2"],
        g=[["0"], ["(x1^2 - 1)*x2"]],
        domain=Box.cube(2, 8.0),
        data_domain=Box.cube(2, 4.0),
    )


_REGISTRY: Dict[str, Callable[[], ControlAffineSystem]] = {
    "vdp_input": vdp_input,
    "mass_spring_4d": mass_spring_4d,
    "pendulum": pendulum,
    "reversed_vdp": reversed_vdp,
}

_CHAIN_RE = re.compile(r"mass_spring_chain\((\d+)\)")


def list_benchmarks() -> List[str]:
    return sorted(_REGISTRY) + ["mass_spring_chain(N)"]


def get_benchmark(name: str, masses: Optional[int] = None) -> Tuple[ControlAffineSystem, CostSpec]:
    """
    Registered benchmark with its default cost q = xᵀx, R = I.

    ``mass_spring_chain`` takes the mass count either inline
    (``"mass_spring_chain(6)"``) or via ``masses``.

    Raises:
        UnknownBenchmarkError: name is not registered
    """
    match = _CHAIN_RE.fullmatch(name.strip())
    if match is not None:
        sys = mass_spring_chain(int(match.group(1)))
    elif name == "mass_spring_chain":
        if masses is None:
            raise UnknownBenchmarkError("mass_spring_chain needs a mass count, e.g. mass_spring_chain(6)")
        sys = mass_spring_chain(masses)
    elif name in _REGISTRY:
        sys = _REGISTRY[name]()
    else:
        raise UnknownBenchmarkError(
            f"unknown benchmark '{name}'; available: {', '.join(list_benchmarks())}"
        )
    return sys, quadratic_cost(np.eye(sys.n), np.eye(sys.k))


# =============================================================================
# System config files
# =============================================================================

def _hessian_at_origin(q: Expression, n: int) -> np.ndarray:
    entries = [differentiate(differentiate(q, i), j) for i in range(n) for j in range(n)]
    return compile_vector(entries).evaluate(np.zeros(n)).reshape(n, n)


def system_from_mapping(data: Mapping[str, Any]) -> Tuple[ControlAffineSystem, CostSpec]:
    """
    Build a system and cost from the config mapping
    ``{"n", "k", "f", "g", "domain", "q", "R", ["Q"], ["name"], ["data_domain"]}``.

    Q defaults to half the Hessian of q at the origin, R to the identity and
    q to xᵀQx (or xᵀx when Q is absent too).
    """
    try:
        n = int(data["n"])
        k = int(data["k"])
        f_text = list(data["f"])
        g_text = [list(row) for row in data["g"]]
        domain = Box.from_bounds(data["domain"])
    except (KeyError, TypeError, ValueError) as e:
        raise SystemDefinitionError(f"invalid system config: {e}") from e
    if len(f_text) != n:
        raise SystemDefinitionError(f"'f' has {len(f_text)} entries, n = {n}")
    if len(g_text) != n or any(len(row) != k for row in g_text):
        raise SystemDefinitionError(f"'g' must be an {n}x{k} matrix")
    data_domain = Box.from_bounds(data["data_domain"]) if data.get("data_domain") else None

    try:
        sys = ControlAffineSystem(
            name=str(data.get("name", "custom")),
            f=_parse_all([str(t) for t in f_text], n),
            g=tuple(_parse_all([str(t) for t in row], n) for row in g_text),
            domain=domain,
            data_domain=data_domain,
        )
        if "q" in data:
            q = parse_expression(str(data["q"]), n)
        elif "Q" in data:
            q = quadratic_form(np.asarray(data["Q"], dtype=np.float64))
        else:
            q = quadratic_form(np.eye(n))
        R_text = data.get("R", [["1" if i == j else "0" for j in range(k)] for i in range(k)])
        R = tuple(tuple(parse_expression(str(t), n) for t in row) for row in R_text)
    except ExpressionSyntaxError as e:
        raise SystemDefinitionError(f"invalid expression in system config: {e}") from e

    if "Q" in data:
        Q = np.asarray(data["Q"], dtype=np.float64)
    else:
        Q = 0.5 * _hessian_at_origin(q, n)
        Q = 0.5 * (Q + Q.T)
    return sys, CostSpec(q=q, R=R, Q=Q)


def load_system_config(path: Union[str, Path]) -> Tuple[ControlAffineSystem, CostSpec]:
    """Load a JSON or YAML system file."""
    logger.info("Loading system config from %s", path)
    return system_from_mapping(read_mapping(path))


def resolve_system(benchmark: Optional[str], system_path: Optional[Union[str, Path]]) -> Tuple[ControlAffineSystem, CostSpec]:
    """Benchmark by name or system config file (exactly one must be given)."""
    if (benchmark is None) == (system_path is None):
        raise SystemDefinitionError("give exactly one of a benchmark name or a system config path")
    if system_path is not None:
        return load_system_config(system_path)
    return get_benchmark(benchmark)  # type: ignore[arg-type]

