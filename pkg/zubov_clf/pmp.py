"""
Pontryagin two-point boundary value problems and the PMP value dataset.

For an initial state x0 the optimal trajectory, adjoint λ and cost-to-go V
solve

    ẋ = f + g u*,   λ̇ = −∂H*/∂x,   V̇ = −(q + u*ᵀRu*),
    x(0) = x0,      λ(T) = 0,      V(T) = 0,

with u* = −½R⁻¹gᵀλ and H* = q + λᵀf − ¼(gᵀλ)ᵀR⁻¹(gᵀλ). The right-hand
side and its Jacobian are built symbolically once per system; the
boundary value problem is discretized by collocation on a uniform mesh and
solved by damped Newton with sparse linear algebra.
"""

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .errors import ExpressionEvaluationError, TPBVPError, TransformError
from .expr import (
    ONE,
    Const,
    Expression,
    Program,
    Var,
    add,
    compile_vector,
    differentiate,
    div,
    dot,
    jacobian,
    mul,
    neg,
    sub,
)
from .interval import Box
from .logging_config import get_logger
from .models import CollocationScheme, PMPConfig, PMPSample, TransformSpec
from .storage import read_json, read_jsonl, write_json, write_jsonl
from .system import ControlAffineSystem, CostSpec

logger = get_logger(__name__)

ARMIJO_SIGMA = 1e-4
MIN_STEP = 2.0 ** -10


# =============================================================================
# Transform
# =============================================================================

def beta_transform(V: Union[float, np.ndarray], transform: TransformSpec) -> Union[float, np.ndarray]:
    """
    W = β(V); output in [0, 1).

    Raises:
        TransformError: V is negative
    """
    values = np.asarray(V, dtype=np.float64)
    if np.any(values < 0.0) or np.any(np.isnan(values)):
        raise TransformError("β is only defined for non-negative values")
    result = transform.beta(values)
    return float(result) if result.ndim == 0 else result


# =============================================================================
# Symbolic problem
# =============================================================================

def inverse_R(cost: CostSpec) -> List[List[Expression]]:
    """R⁻¹ as expressions (constant R, k = 1, or k = 2 via the adjugate)."""
    constant = cost.R_constant
    if constant is not None:
        inv = np.linalg.inv(constant)
        return [[Const(v) for v in row] for row in inv]
    R = cost.R
    if cost.k == 1:
        return [[div(ONE, R[0][0])]]
    if cost.k == 2:
        det = sub(mul(R[0][0], R[1][1]), mul(R[0][1], R[1][0]))
        return [
            [div(R[1][1], det), neg(div(R[0][1], det))],
            [neg(div(R[1][0], det)), div(R[0][0], det)],
        ]
    raise TPBVPError("state-dependent R is supported only for one or two inputs")


@dataclass(frozen=True)
class PMPProblem:
    """
    Compiled augmented right-hand side over y = (x, λ, V).

    Attributes:
        n: State dimension
        rhs: 2n+1 outputs
        jac: (2n+1)² outputs, row-major
        control: k outputs, u*(x, λ)
        running: q + u*ᵀRu* along (x, λ)
    """
    n: int
    k: int
    rhs: Program
    jac: Program
    control: Program
    running: Program

    @property
    def dim(self) -> int:
        return 2 * self.n + 1


@lru_cache(maxsize=16)
def build_problem(sys: ControlAffineSystem, cost: CostSpec) -> PMPProblem:
    n, k = sys.n, sys.k
    lam = [Var(n + i) for i in range(n)]
    R_inv = inverse_R(cost)
    m = [dot(sys.g_column(j), lam) for j in range(k)]
    R_inv_m = [dot(R_inv[j], m) for j in range(k)]
    u = [mul(Const(-0.5), e) for e in R_inv_m]
    control_cost = mul(Const(0.25), dot(m, R_inv_m))
    hamiltonian = sub(add(cost.q, dot(lam, sys.f)), control_cost)

    xdot = [add(sys.f[i], dot(sys.g[i], u)) for i in range(n)]
    lamdot = [neg(differentiate(hamiltonian, i)) for i in range(n)]
    vdot = neg(add(cost.q, control_cost))
    rhs = xdot + lamdot + [vdot]
    jac = [e for row in jacobian(rhs, 2 * n + 1) for e in row]
    return PMPProblem(
        n=n,
        k=k,
        rhs=compile_vector(rhs),
        jac=compile_vector(jac),
        control=compile_vector(u),
        running=compile_vector([add(cost.q, control_cost)]),
    )


# =============================================================================
# Collocation
# =============================================================================

@dataclass
class TPBVPSolution:
    """Mesh solution of one boundary value problem."""
    t: np.ndarray
    x: np.ndarray
    lam: np.ndarray
    V: np.ndarray
    u: np.ndarray
    converged: bool
    iterations: int
    max_defect: float
    boundary_residual: float
    scheme: CollocationScheme
    message: str = ""
    problem: Optional[PMPProblem] = field(default=None, repr=False)

    @property
    def V0(self) -> float:
        return float(self.V[0])

    @property
    def states(self) -> np.ndarray:
        return np.column_stack([self.x, self.lam, self.V])

    def accumulated_cost(self) -> float:
        """Quadrature of q + u*ᵀRu* with the rule matching the collocation scheme."""
        if self.problem is None:
            raise TPBVPError("solution carries no problem to evaluate the running cost")
        Y = self.states
        h = float(self.t[1] - self.t[0])
        L = self.problem.running.evaluate(Y)[:, 0]
        if self.scheme == CollocationScheme.TRAPEZOIDAL:
            return float(0.5 * h * np.sum(L[:-1] + L[1:]))
        F = self.problem.rhs.evaluate(Y)
        Ym = _midpoints(Y, F, h)
        Lm = self.problem.running.evaluate(Ym)[:, 0]
        return float(h / 6.0 * np.sum(L[:-1] + 4.0 * Lm + L[1:]))


def _midpoints(Y: np.ndarray, F: np.ndarray, h: float) -> np.ndarray:
    return 0.5 * (Y[:-1] + Y[1:]) + (h / 8.0) * (F[:-1] - F[1:])


class _Collocation:
    """Residual and sparse Jacobian of the discretized problem."""

    def __init__(self, problem: PMPProblem, x0: np.ndarray, T: float, N: int, scheme: CollocationScheme):
        self.problem = problem
        self.x0 = x0
        self.N = N
        self.h = T / (N - 1)
        self.scheme = scheme
        self.n = problem.n
        self.d = problem.dim
        self._build_pattern()

    def _build_pattern(self) -> None:
        n, d, N = self.n, self.d, self.N
        j = np.arange(N - 1)[:, None, None]
        a = np.arange(d)[None, :, None]
        b = np.arange(d)[None, None, :]
        block_rows = np.broadcast_to(n + j * d + a, (N - 1, d, d)).ravel()
        block_cols = np.broadcast_to(j * d + b, (N - 1, d, d)).ravel()
        end = n + (N - 1) * d
        self._rows = np.concatenate([
            np.arange(n),
            block_rows,
            block_rows,
            end + np.arange(n),
            [end + n],
        ])
        self._cols = np.concatenate([
            np.arange(n),
            block_cols,
            block_cols + d,
            (N - 1) * d + n + np.arange(n),
            [(N - 1) * d + 2 * n],
        ])
        self._boundary_ones = np.ones(n)
        self.size = N * d

    def residual(self, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Full residual vector and the interval (defect) block."""
        n, h = self.n, self.h
        F = self.problem.rhs.evaluate(Y)
        if self.scheme == CollocationScheme.TRAPEZOIDAL:
            defects = Y[1:] - Y[:-1] - 0.5 * h * (F[:-1] + F[1:])
        else:
            Fm = self.problem.rhs.evaluate(_midpoints(Y, F, h))
            defects = Y[1:] - Y[:-1] - (h / 6.0) * (F[:-1] + 4.0 * Fm + F[1:])
        r = np.concatenate([Y[0, :n] - self.x0, defects.ravel(), Y[-1, n:2 * n], Y[-1, 2 * n:]])
        return r, defects

    def jacobian(self, Y: np.ndarray) -> sparse.csc_matrix:
        d, h = self.d, self.h
        J = self.problem.jac.evaluate(Y).reshape(-1, d, d)
        eye = np.eye(d)
        if self.scheme == CollocationScheme.TRAPEZOIDAL:
            D = -eye - 0.5 * h * J[:-1]
            E = eye - 0.5 * h * J[1:]
        else:
            F = self.problem.rhs.evaluate(Y)
            Jm = self.problem.jac.evaluate(_midpoints(Y, F, h)).reshape(-1, d, d)
            D = -eye - (h / 6.0) * (J[:-1] + 4.0 * Jm @ (0.5 * eye + (h / 8.0) * J[:-1]))
            E = eye - (h / 6.0) * (4.0 * Jm @ (0.5 * eye - (h / 8.0) * J[1:]) + J[1:])
        values = np.concatenate([
            self._boundary_ones,
            D.ravel(),
            E.ravel(),
            self._boundary_ones,
            [1.0],
        ])
        return sparse.coo_matrix((values, (self._rows, self._cols)), shape=(self.size, self.size)).tocsc()


def _safe_residual(colloc: _Collocation, Y: np.ndarray) -> Optional[tuple[np.ndarray, np.ndarray]]:
    try:
        r, defects = colloc.residual(Y)
    except (ExpressionEvaluationError, FloatingPointError):
        return None
    if not np.all(np.isfinite(r)):
        return None
    return r, defects


def _initial_guess(x0: np.ndarray, t: np.ndarray, d: int) -> np.ndarray:
    n = x0.shape[0]
    Y = np.zeros((t.shape[0], d))
    Y[:, :n] = x0[None, :] * (1.0 - t / t[-1])[:, None]
    return Y


def _newton(colloc: _Collocation, Y: np.ndarray, tol: float, max_iterations: int) -> tuple[np.ndarray, bool, int, str]:
    evaluated = _safe_residual(colloc, Y)
    if evaluated is None:
        return Y, False, 0, "residual not finite at the initial guess"
    r, _ = evaluated
    merit = float(r @ r)
    for iteration in range(max_iterations + 1):
        if np.max(np.abs(r)) <= tol:
            # one polishing step
            try:
                step = spsolve(colloc.jacobian(Y), -r).reshape(Y.shape)
                polished = _safe_residual(colloc, Y + step)
                if polished is not None and float(polished[0] @ polished[0]) < merit:
                    Y = Y + step
            except (ExpressionEvaluationError, RuntimeError):
                pass
            return Y, True, iteration, "converged"
        if iteration == max_iterations:
            break
        try:
            step = spsolve(colloc.jacobian(Y), -r)
        except (ExpressionEvaluationError, RuntimeError) as e:
            return Y, False, iteration, f"linear solve failed: {e}"
        if not np.all(np.isfinite(step)):
            return Y, False, iteration, "Newton step not finite"
        step = step.reshape(Y.shape)

        alpha = 1.0
        while alpha >= MIN_STEP:
            candidate = Y + alpha * step
            evaluated = _safe_residual(colloc, candidate)
            if evaluated is not None:
                r_new = evaluated[0]
                merit_new = float(r_new @ r_new)
                if merit_new <= (1.0 - 2.0 * ARMIJO_SIGMA * alpha) * merit:
                    break
            alpha *= 0.5
        else:
            return Y, False, iteration, "line search failed"
        logger.debug("Newton iteration %d: step %.3g, residual %.3e", iteration, alpha, np.sqrt(merit_new))
        Y, r, merit = candidate, r_new, merit_new
    return Y, False, max_iterations, "iteration limit reached"


def _solve_on_mesh(problem: PMPProblem, x0: np.ndarray, T: float, N: int, tol: float,
                   scheme: CollocationScheme, max_iterations: int,
                   guess: Optional[np.ndarray]) -> TPBVPSolution:
    t = np.linspace(0.0, T, N)
    colloc = _Collocation(problem, x0, T, N, scheme)
    Y0 = _initial_guess(x0, t, problem.dim) if guess is None else guess
    Y, converged, iterations, message = _newton(colloc, Y0, tol, max_iterations)
    n = problem.n
    evaluated = _safe_residual(colloc, Y)
    if evaluated is None:
        max_defect = boundary = float("inf")
        converged = False
    else:
        r, defects = evaluated
        max_defect = float(np.max(np.abs(defects))) if defects.size else 0.0
        boundary = float(max(np.max(np.abs(r[:n])), np.max(np.abs(r[-(n + 1):]))))
    try:
        u = problem.control.evaluate(Y)
    except ExpressionEvaluationError:
        u = np.full((N, problem.k), np.nan)
        converged = False
    return TPBVPSolution(
        t=t,
        x=Y[:, :n].copy(),
        lam=Y[:, n:2 * n].copy(),
        V=Y[:, 2 * n].copy(),
        u=u,
        converged=converged,
        iterations=iterations,
        max_defect=max_defect,
        boundary_residual=boundary,
        scheme=scheme,
        message=message,
        problem=problem,
    )


def _regrid(solution: TPBVPSolution, t_new: np.ndarray) -> np.ndarray:
    Y = solution.states
    return np.column_stack([
        np.interp(t_new, solution.t, Y[:, c], right=Y[-1, c]) for c in range(Y.shape[1])
    ])


def solve_tpbvp(
    sys: ControlAffineSystem,
    cost: CostSpec,
    x0: Sequence[float],
    T: float,
    N: int,
    tol: float,
    scheme: Union[str, CollocationScheme] = CollocationScheme.HERMITE_SIMPSON,
    max_iterations: int = 40,
    continuation: Sequence[float] = (),
) -> TPBVPSolution:
    """
    Solve the PMP boundary value problem from x0 on [0, T] with N mesh points.

    Newton divergence is not an exception: the returned solution has
    ``converged=False`` and a message.

    Raises:
        TPBVPError: invalid arguments
    """
    x0_arr = np.asarray(x0, dtype=np.float64)
    if T <= 0.0:
        raise TPBVPError("horizon T must be positive")
    if N < 10:
        raise TPBVPError("mesh needs at least 10 points")
    if tol <= 0.0:
        raise TPBVPError("tolerance must be positive")
    if x0_arr.shape != (sys.n,):
        raise TPBVPError(f"x0 has shape {x0_arr.shape}, expected ({sys.n},)")
    scheme = CollocationScheme(scheme)
    problem = build_problem(sys, cost)

    previous: Optional[TPBVPSolution] = None
    for horizon in continuation:
        if horizon >= T:
            break
        guess = None if previous is None else _regrid(previous, np.linspace(0.0, horizon, N))
        partial = _solve_on_mesh(problem, x0_arr, horizon, N, tol, scheme, max_iterations, guess)
        logger.debug("Continuation T=%.3g: %s", horizon, partial.message)
        previous = partial if partial.converged else previous
    guess = None if previous is None else _regrid(previous, np.linspace(0.0, T, N))
    return _solve_on_mesh(problem, x0_arr, T, N, tol, scheme, max_iterations, guess)


# =============================================================================
# Dataset
# =============================================================================

@dataclass
class PMPDataset:
    """Converged PMP samples with their generation config."""
    samples: List[PMPSample]
    config: Dict[str, Any]
    attempted: int = 0

    @property
    def success_count(self) -> int:
        return len(self.samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def X(self) -> np.ndarray:
        n = int(self.config.get("n", 0))
        if not self.samples:
            return np.zeros((0, n))
        return np.array([s.x0 for s in self.samples])

    @property
    def V(self) -> np.ndarray:
        return np.array([s.V0 for s in self.samples])

    @property
    def W(self) -> np.ndarray:
        return np.array([s.W0 for s in self.samples])

    def stats(self) -> Dict[str, Any]:
        return {
            "attempted": self.attempted,
            "converged": self.success_count,
            "success_fraction": self.success_count / self.attempted if self.attempted else 0.0,
        }

    def save(self, path: Union[str, Path]) -> Path:
        """JSON-lines records {"x", "V", "W"} plus a ``.meta.json`` sidecar."""
        target = Path(path)
        write_jsonl(target, ({"x": s.x0, "V": s.V0, "W": s.W0} for s in self.samples))
        write_json(_meta_path(target), {"config": self.config, **self.stats()})
        return target

    @classmethod
    def load(cls, path: Union[str, Path]) -> "PMPDataset":
        target = Path(path)
        records = read_jsonl(target)
        meta_path = _meta_path(target)
        meta = read_json(meta_path) if meta_path.exists() else {}
        samples = [PMPSample(x0=r["x"], V0=r["V"], W0=r["W"], converged=True) for r in records]
        config = dict(meta.get("config", {}))
        if samples and "n" not in config:
            config["n"] = len(samples[0].x0)
        return cls(samples=samples, config=config, attempted=int(meta.get("attempted", len(samples))))


def _meta_path(path: Path) -> Path:
    return path.with_name(path.stem + ".meta.json")


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for sample ``index``: Philox keyed by seed, counter by index."""
    counter = np.array([0, index, 0, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=seed % (1 << 128), counter=counter))


def _stored(solution: TPBVPSolution, tol: float, transform: TransformSpec) -> bool:
    if not solution.converged or not np.isfinite(solution.V0) or solution.V0 < 0.0:
        return False
    if not transform.beta(solution.V0) < 1.0:
        logger.debug("dropping sample with V0 = %.6g: W rounds to 1", solution.V0)
        return False
    # V must not increase along the trajectory
    return bool(np.all(np.diff(solution.V) <= 10.0 * tol))


def generate_dataset(
    sys: ControlAffineSystem,
    cost: CostSpec,
    n_samples: int,
    T: float,
    N: int,
    tol: float,
    domain: Optional[Box] = None,
    seed: int = 0,
    transform: Optional[TransformSpec] = None,
    scheme: Union[str, CollocationScheme] = CollocationScheme.HERMITE_SIMPSON,
    continuation: Sequence[float] = (),
    max_iterations: int = 40,
    threads: Optional[int] = None,
) -> PMPDataset:
    """
    Solve from ``n_samples`` uniform initial states and keep the converged
    ones whose W = β(V) is still below 1 in floating point.

    Sample i draws its initial state from its own (seed, i) stream, and
    results are merged in index order, so the dataset does not depend on
    the thread count.
    """
    transform = transform or TransformSpec()
    box = domain if domain is not None else sys.sample_domain
    if not sys.domain.contains_box(box):
        raise TPBVPError("sampling domain must lie inside the system domain")
    scheme = CollocationScheme(scheme)
    config = {
        "system": sys.name,
        "n": sys.n,
        "n_samples": n_samples,
        "T": T,
        "N": N,
        "tol": tol,
        "domain": box.to_list(),
        "seed": seed,
        "scheme": scheme.value,
        "continuation": list(continuation),
        "transform": transform.model_dump(mode="json"),
    }
    if n_samples == 0:
        logger.warning("No samples requested; returning an empty dataset")
        return PMPDataset(samples=[], config=config, attempted=0)

    build_problem(sys, cost)
    workers = threads or os.cpu_count() or 1
    started = time.perf_counter()
    progress_every = max(1, n_samples // 10)

    def solve_one(index: int) -> PMPSample:
        x0 = box.sample(sample_rng(seed, index), 1)[0]
        solution = solve_tpbvp(sys, cost, x0, T, N, tol, scheme=scheme,
                               max_iterations=max_iterations, continuation=continuation)
        keep = _stored(solution, tol, transform)
        V0 = solution.V0 if keep else 0.0
        sample = PMPSample(
            x0=x0.tolist(),
            V0=V0,
            W0=float(transform.beta(V0)),
            converged=keep,
            iterations=solution.iterations,
            max_defect=solution.max_defect if np.isfinite(solution.max_defect) else -1.0,
            boundary_residual=solution.boundary_residual if np.isfinite(solution.boundary_residual) else -1.0,
        )
        if (index + 1) % progress_every == 0:
            logger.info("PMP sample %d/%d solved", index + 1, n_samples)
        return sample

    with ThreadPoolExecutor(max_workers=workers) as executor:
        results = list(executor.map(solve_one, range(n_samples)))

    samples = [s for s in results if s.converged]
    dataset = PMPDataset(samples=samples, config=config, attempted=n_samples)
    elapsed = time.perf_counter() - started
    if not samples:
        logger.warning("No boundary value problem converged out of %d attempts", n_samples)
    logger.info("PMP dataset: %d/%d converged in %.1fs with %d threads",
                dataset.success_count, n_samples, elapsed, workers)
    return dataset


def generate_from_config(sys: ControlAffineSystem, cost: CostSpec, transform: TransformSpec,
                         config: PMPConfig, threads: Optional[int] = None) -> PMPDataset:
    domain = Box.from_bounds(config.domain) if config.domain is not None else None
    return generate_dataset(
        sys, cost,
        n_samples=config.n_samples,
        T=config.T,
        N=config.N,
        tol=config.tol,
        domain=domain,
        seed=config.seed,
        transform=transform,
        scheme=config.scheme,
        continuation=config.continuation,
        max_iterations=config.max_iterations,
        threads=threads,
    )
