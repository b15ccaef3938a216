"""
Benchmark harness: the full qclf → pmp-data → train → verify → simulate
pipeline for one system, writing every artifact into a run directory.

Layout of a run directory:

    config.json           effective configuration
    run.log               log of the CLI stages run here
    certificate.json      Riccati certificate with verified levels
    qclf/*.smt2           SMT-LIB2 queries (smtlib backend)
    dataset.jsonl         PMP samples (+ dataset.meta.json)
    model.json            trained network
    history.csv           training loss history
    levels.json           verified levels c1, c2 of the neural CLF
    verify/*.json         verdicts of every check
    grids/*.csv           level-set grids (+ .json metadata), phase portrait
    traj/*.csv            closed-loop trajectories
    report.json           PipelineReport
"""

import time
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Union

import numpy as np

from .controlsim import SontagController, Trajectory, compare_costs, cost_label
from .errors import PipelineStageError, ZubovError
from .interval import Box
from .levelfn import ExpressionFunction, HJBFeedback, NeuralLevelFunction
from .logging_config import get_logger
from .models import (
    PipelineReport,
    QuadraticCertificate,
    RunConfig,
    TrainConfig,
    TransformSpec,
    Verdict,
    VerifyBackend,
    VerifyConfig,
)
from .pinn import TrainingResult, train, zubov_residual
from .pmp import PMPDataset, generate_from_config
from .riccati import compute_certificate
from .smtlib import check_external, describe_external, global_condition, write_smtlib
from .storage import write_csv, write_json
from .system import ControlAffineSystem, CostSpec, resolve_system
from .verify import levelset_area, verify_closed_loop_roa, verify_neural, verify_quadratic

logger = get_logger(__name__)

PathLike = Union[str, Path]


# =============================================================================
# Figure data
# =============================================================================

def _values(fn, X: np.ndarray) -> np.ndarray:
    if hasattr(fn, "value"):
        return np.atleast_1d(fn.value(X))
    if hasattr(fn, "forward"):
        return np.atleast_1d(fn.forward(X))
    return np.broadcast_to(np.asarray(fn(X), dtype=np.float64), (len(X),))


def export_levelset_grid(fn, box: Box, resolution: int, levels: Dict[str, float],
                         path: PathLike) -> Path:
    """
    Tensor grid of function values as CSV (x1..xn, value) plus
    ``<stem>.json`` with the contour levels, box and value range.
    """
    if resolution < 2:
        raise ValueError("grid resolution must be at least 2")
    path = Path(path)
    X = box.grid(resolution)
    values = _values(fn, X).astype(np.float64)
    header = [f"x{i + 1}" for i in range(box.dim)] + ["value"]
    write_csv(path, header, np.column_stack([X, values]))
    write_json(path.with_suffix(".json"), {
        "box": box.to_list(),
        "resolution": resolution,
        "levels": {name: float(level) for name, level in sorted(levels.items())},
        "min": float(np.min(values)),
        "max": float(np.max(values)),
    })
    return path


def export_phase_portrait(sys: ControlAffineSystem, controller, box: Box, resolution: int,
                          path: PathLike) -> Path:
    """Closed-loop vector field on a grid: x1..xn, dx1..dxn."""
    X = box.grid(resolution)
    U = np.atleast_2d(controller.evaluate(X))
    F = sys.vector_field(X, U)
    header = [f"x{i + 1}" for i in range(sys.n)] + [f"dx{i + 1}" for i in range(sys.n)]
    return write_csv(path, header, np.column_stack([X, F]))


def annulus_samples(outer: Box, inner: Box, count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples of outer ∖ inner by rejection."""
    chunks: List[np.ndarray] = []
    total = 0
    while total < count:
        X = outer.sample(rng, 2 * count)
        keep = ~np.all((X >= inner.lo) & (X <= inner.hi), axis=1)
        chunks.append(X[keep])
        total += int(keep.sum())
    return np.concatenate(chunks)[:count]


def extrapolation_error(sys: ControlAffineSystem, cost: CostSpec, net, transform: TransformSpec,
                        outer: Box, inner: Box, samples: int = 20_000, seed: int = 0) -> float:
    """Mean |Zubov residual| on the annulus outer ∖ inner."""
    X = annulus_samples(outer, inner, samples, np.random.default_rng(seed))
    return float(np.mean(np.abs(zubov_residual(sys, cost, net, X, transform))))


def ablation(sys: ControlAffineSystem, cost: CostSpec, dataset: PMPDataset, config: TrainConfig,
             transform: TransformSpec, outer: Box, physics: Optional[TrainingResult] = None,
             samples: int = 20_000) -> Dict[str, Any]:
    """
    Data-only versus physics-informed training, compared by the mean
    residual on the extrapolation annulus outside the training domain.
    """
    data_only = train(sys, cost, dataset, config.model_copy(update={"lambda_r": 0.0}), transform)
    if physics is None:
        physics = train(sys, cost, dataset, config, transform)
    inner = sys.domain
    errors = {
        "data_only": extrapolation_error(sys, cost, data_only.net, transform, outer, inner, samples, config.seed),
        "physics_informed": extrapolation_error(sys, cost, physics.net, transform, outer, inner, samples, config.seed),
    }
    ratio = errors["data_only"] / errors["physics_informed"] if errors["physics_informed"] > 0 else np.inf
    logger.info("extrapolation residual: data-only %.4g, physics-informed %.4g (ratio %.3g)",
                errors["data_only"], errors["physics_informed"], ratio)
    return {"annulus": {"outer": outer.to_list(), "inner": inner.to_list()},
            "mean_abs_residual": errors, "ratio": float(ratio)}


# =============================================================================
# Pipeline
# =============================================================================

@contextmanager
def _stage(name: str, runtimes: Dict[str, float]) -> Iterator[None]:
    start = time.perf_counter()
    logger.info("Stage '%s' started", name)
    try:
        yield
    except PipelineStageError:
        raise
    except (ZubovError, np.linalg.LinAlgError, ValueError) as e:
        logger.error("Stage '%s' failed: %s", name, e)
        raise PipelineStageError(name, e) from e
    finally:
        runtimes[name] = time.perf_counter() - start


def _write_verdicts(directory: Path, stage: str, verdicts: Sequence[Verdict]) -> List[Dict[str, Any]]:
    records = [v.model_dump(mode="json") for v in verdicts]
    write_json(directory / f"{stage}.json", records)
    return records


def default_initial_conditions(sys: ControlAffineSystem) -> List[List[float]]:
    """One start point a third of the way to the lower domain corner."""
    return [(sys.domain.lo / 3.0).tolist()]


def run_pipeline(config: RunConfig, out: Optional[PathLike] = None,
                 threads: int = 1) -> PipelineReport:
    """
    Run every stage for the configured benchmark or system file.

    Stages run in order; a failing stage raises PipelineStageError with
    its name while the artifacts of earlier stages stay on disk. The
    system is resolved before anything is written.
    """
    runtimes: Dict[str, float] = {}
    try:
        sys, cost = resolve_system(config.benchmark, config.system)
    except ZubovError as e:
        raise PipelineStageError("system", e) from e
    run_dir = Path(out or config.out)
    run_dir.mkdir(parents=True, exist_ok=True)
    verify_dir = run_dir / "verify"
    grids = run_dir / "grids"
    write_json(run_dir / "config.json", config)
    report = PipelineReport(benchmark=sys.name)
    vc = config.verify
    delta = vc.delta_for(sys.n)
    transform = config.transform

    with _stage("qclf", runtimes):
        cert = compute_certificate(sys, cost)
        verdicts: List[Verdict] = []
        cert = verify_quadratic(sys, cert, delta=delta, config=vc, threads=threads, verdicts=verdicts)
        write_json(run_dir / "certificate.json", cert)
        report.certificate = cert.model_dump(mode="json")
        report.verification["qclf"] = _write_verdicts(verify_dir, "qclf", verdicts)
        if vc.backend == VerifyBackend.SMTLIB:
            report.verification["global_smt"] = global_smt_query(sys, cert, run_dir / "qclf", vc)

    with _stage("pmp-data", runtimes):
        dataset = generate_from_config(sys, cost, transform, config.pmp, threads=threads)
        dataset.save(run_dir / "dataset.jsonl")
        report.dataset = dataset.stats()

    with _stage("train", runtimes):
        result = train(sys, cost, dataset, config.train, transform)
        result.net.save(run_dir / "model.json")
        result.write_history(run_dir / "history.csv")
        report.training = result.summary()

    net = result.net
    W = NeuralLevelFunction(net, mean_value=vc.mean_value)
    V = ExpressionFunction.quadratic(cert.P_matrix)

    with _stage("verify", runtimes):
        verdicts = []
        levels = verify_neural(sys, net, cert, delta=delta, config=vc, threads=threads, verdicts=verdicts)
        report.verification["levels"] = levels.model_dump(mode="json")
        write_json(run_dir / "levels.json", levels)
        report.verification["neural"] = _write_verdicts(verify_dir, "neural", verdicts)
        if config.bench.roa:
            verdicts = []
            roa = verify_closed_loop_roa(sys, cost, net, cert, upper=levels.c2 or levels.c1, delta=delta,
                                         config=vc, threads=threads, verdicts=verdicts)
            report.verification["roa"] = roa
            report.verification["roa_checks"] = _write_verdicts(verify_dir, "roa", verdicts)

    with _stage("simulate", runtimes):
        controllers = {
            cost_label("neural_hjb"): HJBFeedback(W, sys, cost),
            "sontag": SontagController(W, sys),
        }
        traj_dir = run_dir / "traj"
        for index, x0 in enumerate(config.simulate.x0 or default_initial_conditions(sys)):
            comparison = compare_costs(sys, cost, controllers, x0, config.simulate.T, config.simulate.blowup)
            trajectories: Dict[str, Trajectory] = comparison.pop("trajectories")
            for name, trajectory in trajectories.items():
                trajectory.write_csv(traj_dir / f"{name}_{index}.csv")
            report.costs.append(comparison)

    with _stage("figures", runtimes):
        c2 = levels.c2 if levels.c2 is not None else levels.c1
        bench = config.bench
        report.areas = {
            "V_P": levelset_area(V, cert.c_P, sys.domain, bench.area_samples, config.train.seed),
            "W_N": levelset_area(W, c2, sys.domain, bench.area_samples, config.train.seed),
        }
        report.areas["ratio"] = report.areas["W_N"] / report.areas["V_P"] if report.areas["V_P"] > 0 else float("inf")
        export_levelset_grid(V, sys.domain, bench.grid_resolution,
                             {"c_P1": cert.c_P1, "c_P": cert.c_P}, grids / "V_P.csv")
        export_levelset_grid(W, sys.domain, bench.grid_resolution,
                             {"c1": levels.c1, "c2": c2}, grids / "W_N.csv")
        outer = sys.domain.scaled(bench.extrapolation_factor)
        if sys.n == 2:
            export_levelset_grid(W, outer, bench.grid_resolution, {"c1": levels.c1, "c2": c2},
                                 grids / "W_N_extrapolation.csv")
            export_phase_portrait(sys, controllers["sontag"], sys.domain, 25, grids / "phase_sontag.csv")
        if bench.ablation:
            report.ablation = ablation(sys, cost, dataset, config.train, transform, outer, physics=result)

    report.runtimes = {k: round(v, 3) for k, v in runtimes.items()}
    write_json(run_dir / "report.json", report)
    logger.info("Pipeline for %s finished: c_P=%.4g c1=%.4g c2=%s", sys.name, cert.c_P, levels.c1, levels.c2)
    return report


def global_smt_query(sys: ControlAffineSystem, cert: QuadraticCertificate, directory: Path,
                     vc: VerifyConfig) -> Dict[str, Any]:
    """Emit the unbounded global CLF query and run the solver when one is configured."""
    cond = global_condition(ExpressionFunction.quadratic(cert.P_matrix), sys)
    if vc.smt_solver is None:
        path = write_smtlib(cond, directory, vc.smt_logic, bounded=False)
        return {"query": path.name, "result": "not run"}
    verdict = check_external(cond, directory, vc.smt_solver, vc.smt_logic, bounded=False,
                             timeout=vc.smt_timeout)
    return {"query": f"{cond.name}.smt2", "result": describe_external(verdict),
            "verdict": verdict.model_dump(mode="json")}


def verification_passed(report: PipelineReport) -> bool:
    """True when the neural levels and, if requested, the ROA level were all verified."""
    levels = report.verification.get("levels")
    if not levels or levels.get("c2") is None:
        return False
    return "roa" not in report.verification or report.verification["roa"] is not None
