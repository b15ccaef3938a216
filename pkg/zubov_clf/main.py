"""
zubov-clf command line.

Every pipeline stage is a subcommand; configuration comes from an optional
JSON/YAML file, a handful of common options and dotted overrides
(``--verify.delta 1e-4``). Human diagnostics go to standard error, machine
artifacts only to files in the output directory.

Exit codes:
    0  success
    1  a verification check ended in a counterexample or unknown verdict
    2  usage or configuration error
    3  numeric failure
"""

import subprocess
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, NoReturn, Optional, Tuple, Type, TypeVar

import numpy as np
import typer
from pydantic import BaseModel, ValidationError
from rich.console import Console
from rich.table import Table

from . import __version__
from .bench import (
    default_initial_conditions,
    export_levelset_grid,
    global_smt_query,
    run_pipeline,
    verification_passed,
)
from .config import load_run_config, parse_overrides, resolve_threads
from .controlsim import compare_costs, cost_label, make_controller
from .errors import (
    ConfigError,
    ExpressionSyntaxError,
    PipelineStageError,
    SmtEmissionError,
    SystemDefinitionError,
    VerificationError,
    ZubovError,
)
from .levelfn import ExpressionFunction, NeuralLevelFunction
from .logging_config import attach_run_log, get_logger, setup_logging
from .models import NeuralLevels, QuadraticCertificate, RunConfig, VerifyBackend
from .pinn import NeuralValueFunction, train as train_network
from .pmp import PMPDataset, generate_from_config
from .riccati import compute_certificate
from .storage import read_json, write_json
from .system import ControlAffineSystem, CostSpec, resolve_system
from .verify import verify_closed_loop_roa, verify_neural, verify_quadratic

logger = get_logger(__name__)
console = Console(stderr=True)

EXIT_OK = 0
EXIT_UNVERIFIED = 1
EXIT_USAGE = 2
EXIT_NUMERIC = 3

OVERRIDES = {"allow_extra_args": True, "ignore_unknown_options": True}
HANDLED_ERRORS = (ZubovError, np.linalg.LinAlgError)
RecordT = TypeVar("RecordT", bound=BaseModel)

app = typer.Typer(
    name="zubov-clf",
    help="Quadratic and neural control Lyapunov functions with formal verification.",
    no_args_is_help=True,
    add_completion=False,
)


# ============================================================================
# Version and global options
# ============================================================================

def git_hash() -> str:
    """Short commit hash of the source checkout, or 'unknown'."""
    try:
        result = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            cwd=str(Path(__file__).resolve().parent),
            capture_output=True,
            text=True,
            check=True,
        )
        return result.stdout.strip() or "unknown"
    except (OSError, subprocess.CalledProcessError):
        return "unknown"


def _version_callback(value: bool) -> None:
    if value:
        typer.echo(f"zubov-clf {__version__} ({git_hash()})")
        raise typer.Exit()


@app.callback()
def main(
    version: bool = typer.Option(False, "--version", callback=_version_callback, is_eager=True,
                                 help="Print version and git hash, then exit."),
    log_level: Optional[str] = typer.Option(None, "--log-level",
                                            help="DEBUG, INFO, WARNING, ERROR or CRITICAL."),
) -> None:
    """Quadratic and neural control Lyapunov functions with formal verification."""
    setup_logging(log_level)


# ============================================================================
# Error mapping
# ============================================================================

def exit_code_for(error: BaseException) -> int:
    """Map a package error to the documented exit code."""
    if isinstance(error, PipelineStageError):
        return exit_code_for(error.cause) if error.cause is not None else EXIT_NUMERIC
    if isinstance(error, (ConfigError, SystemDefinitionError, ExpressionSyntaxError, SmtEmissionError)):
        return EXIT_USAGE
    if isinstance(error, VerificationError):
        return EXIT_UNVERIFIED
    return EXIT_NUMERIC


def _fail(error: Exception) -> NoReturn:
    code = exit_code_for(error)
    console.print(f"[bold red]error:[/bold red] {error}", highlight=False)
    raise typer.Exit(code=code)


# ============================================================================
# Shared loading
# ============================================================================

def _run_config(ctx: typer.Context, config: Optional[Path], fallback: Optional[Path] = None,
                **options: Any) -> RunConfig:
    """
    Config file (or ``fallback`` when it exists) plus dotted overrides plus
    the common options that were actually given.
    """
    overrides = parse_overrides(ctx.args)
    given = {key: value for key, value in options.items() if value is not None}
    if "benchmark" in given:
        given.setdefault("system", None)
    elif "system" in given:
        given["benchmark"] = None
    for key, value in given.items():
        overrides[key] = value.value if isinstance(value, Enum) else value
    path = config
    if path is None and fallback is not None and fallback.exists():
        logger.info("Using configuration of the previous run: %s", fallback)
        path = fallback
    return load_run_config(path, overrides)


def _common(benchmark: Optional[str], system: Optional[Path], seed: Optional[int],
            backend: Optional[VerifyBackend], delta: Optional[float]) -> Dict[str, Any]:
    return {
        "benchmark": benchmark,
        "system": str(system) if system is not None else None,
        "seed": seed,
        "verify.backend": backend,
        "verify.delta": delta,
    }


def _prepare(cfg: RunConfig, out: Optional[Path], threads: Optional[int],
             default_out: Optional[Path] = None) -> Tuple[ControlAffineSystem, CostSpec, Path, int]:
    sys, cost = resolve_system(cfg.benchmark, cfg.system)
    run_dir = Path(out or default_out or cfg.out)
    run_dir.mkdir(parents=True, exist_ok=True)
    write_json(run_dir / "config.json", cfg)
    attach_run_log(run_dir)
    return sys, cost, run_dir, resolve_threads(threads, cfg.threads)


def _read_record(model: Type[RecordT], path: Path) -> RecordT:
    try:
        return model.model_validate(read_json(path))
    except ValidationError as e:
        raise ConfigError(f"{path} is not a valid {model.__name__}: {e}") from e


def _load_certificate(path: Path) -> QuadraticCertificate:
    if not path.exists():
        raise ConfigError(f"no certificate at {path}; run 'zubov-clf qclf' first")
    cert = _read_record(QuadraticCertificate, path)
    if not cert.c_P > 0.0:
        raise ConfigError(f"certificate {path} carries no verified level; run 'zubov-clf qclf' first")
    return cert


def _load_network(path: Path) -> NeuralValueFunction:
    if not path.exists():
        raise ConfigError(f"no model at {path}; run 'zubov-clf train' first")
    try:
        return NeuralValueFunction.load(path)
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"{path} is not a valid model: {e}") from e


def _write_verdicts(directory: Path, stage: str, verdicts: List[Any]) -> None:
    write_json(directory / "verify" / f"{stage}.json", [v.model_dump(mode="json") for v in verdicts])


# Options shared by every stage
ConfigOption = typer.Option(None, "--config", "-c", help="JSON or YAML run configuration.")
BenchmarkOption = typer.Option(None, "--benchmark", "-b", help="Built-in benchmark name.")
SystemOption = typer.Option(None, "--system", help="System definition file (JSON or YAML).")
OutOption = typer.Option(None, "--out", "-o", help="Output directory.")
ThreadsOption = typer.Option(None, "--threads", "-j", min=1, help="Worker threads (default: ZUBOV_CLF_THREADS or CPU count).")
SeedOption = typer.Option(None, "--seed", help="Seed for sampling and training.")
BackendOption = typer.Option(None, "--backend", help="Verification backend: native or smtlib.")
DeltaOption = typer.Option(None, "--delta", min=0.0, help="Verification tolerance δ.")


# ============================================================================
# Commands
# ============================================================================

@app.command(context_settings=OVERRIDES)
def qclf(
    ctx: typer.Context,
    config: Optional[Path] = ConfigOption,
    benchmark: Optional[str] = BenchmarkOption,
    system: Optional[Path] = SystemOption,
    out: Optional[Path] = OutOption,
    threads: Optional[int] = ThreadsOption,
    seed: Optional[int] = SeedOption,
    backend: Optional[VerifyBackend] = BackendOption,
    delta: Optional[float] = DeltaOption,
) -> None:
    """Riccati certificate V_P = xᵀPx with verified levels c_P1 ≤ c_P."""
    try:
        cfg = _run_config(ctx, config, **_common(benchmark, system, seed, backend, delta))
        sys, cost, run_dir, workers = _prepare(cfg, out, threads)
        verdicts: List[Any] = []
        cert = verify_quadratic(sys, compute_certificate(sys, cost), config=cfg.verify,
                                threads=workers, verdicts=verdicts)
        write_json(run_dir / "certificate.json", cert)
        _write_verdicts(run_dir, "qclf", verdicts)
        if cfg.verify.backend == VerifyBackend.SMTLIB:
            smt = global_smt_query(sys, cert, run_dir / "qclf", cfg.verify)
            console.print(f"SMT-LIB2 query: {run_dir / 'qclf' / smt['query']} ({smt['result']})")
    except HANDLED_ERRORS as e:
        _fail(e)

    table = Table(title=f"Quadratic CLF for {sys.name}")
    table.add_column("level")
    table.add_column("value", justify="right")
    table.add_row("c_P1", f"{cert.c_P1:.6g}")
    table.add_row("c_P", f"{cert.c_P:.6g}")
    table.add_row("global on domain", str(cert.global_on_domain))
    table.add_row("ARE residual", f"{cert.residual:.2e}")
    console.print(table)


@app.command("pmp-data", context_settings=OVERRIDES)
def pmp_data(
    ctx: typer.Context,
    config: Optional[Path] = ConfigOption,
    benchmark: Optional[str] = BenchmarkOption,
    system: Optional[Path] = SystemOption,
    out: Optional[Path] = OutOption,
    threads: Optional[int] = ThreadsOption,
    seed: Optional[int] = SeedOption,
) -> None:
    """Solve the PMP boundary value problems and write dataset.jsonl."""
    try:
        cfg = _run_config(ctx, config, **_common(benchmark, system, seed, None, None))
        sys, cost, run_dir, workers = _prepare(cfg, out, threads)
        dataset = generate_from_config(sys, cost, cfg.transform, cfg.pmp, threads=workers)
        path = dataset.save(run_dir / "dataset.jsonl")
    except HANDLED_ERRORS as e:
        _fail(e)
    stats = dataset.stats()
    console.print(f"{stats['converged']}/{stats['attempted']} boundary value problems converged → {path}")
    if cfg.pmp.n_samples > 0 and not stats["converged"]:
        raise typer.Exit(code=EXIT_NUMERIC)


@app.command(context_settings=OVERRIDES)
def train(
    ctx: typer.Context,
    config: Optional[Path] = ConfigOption,
    benchmark: Optional[str] = BenchmarkOption,
    system: Optional[Path] = SystemOption,
    out: Optional[Path] = OutOption,
    seed: Optional[int] = SeedOption,
    dataset: Optional[Path] = typer.Option(None, "--dataset", help="PMP dataset (default: <out>/dataset.jsonl)."),
) -> None:
    """Train the neural value function W_N and write model.json."""
    try:
        cfg = _run_config(ctx, config, **_common(benchmark, system, seed, None, None))
        sys, cost, run_dir, _ = _prepare(cfg, out, None)
        data_path = dataset or run_dir / "dataset.jsonl"
        data: Optional[PMPDataset] = None
        if data_path.exists():
            data = PMPDataset.load(data_path)
        elif dataset is not None:
            raise ConfigError(f"no dataset at {data_path}")
        else:
            logger.warning("No dataset at %s; training on the residual only", data_path)
        result = train_network(sys, cost, data, cfg.train, cfg.transform)
        result.net.save(run_dir / "model.json")
        result.write_history(run_dir / "history.csv")
    except HANDLED_ERRORS as e:
        _fail(e)
    console.print(f"residual MSE {result.final_residual_mse:.3e} after {result.elapsed:.1f}s → {run_dir / 'model.json'}")


@app.command(context_settings=OVERRIDES)
def verify(
    ctx: typer.Context,
    config: Optional[Path] = ConfigOption,
    benchmark: Optional[str] = BenchmarkOption,
    system: Optional[Path] = SystemOption,
    out: Optional[Path] = OutOption,
    threads: Optional[int] = ThreadsOption,
    delta: Optional[float] = DeltaOption,
    model: Path = typer.Option(..., "--model", "-m", help="Trained network (model.json)."),
    certificate: Optional[Path] = typer.Option(
        None, "--certificate", help="Quadratic certificate (default: next to the model)."),
) -> None:
    """Verify the neural CLF levels c1 < c2 and the closed-loop region of attraction."""
    verdicts: List[Any] = []
    roa_verdicts: List[Any] = []
    try:
        cert = _load_certificate(certificate or model.parent / "certificate.json")
        net = _load_network(model)
        cfg = _run_config(ctx, config, fallback=model.parent / "config.json",
                          **_common(benchmark, system, None, None, delta))
        sys, cost, run_dir, workers = _prepare(cfg, out, threads, default_out=model.parent)
        try:
            levels = verify_neural(sys, net, cert, config=cfg.verify, threads=workers, verdicts=verdicts)
        finally:
            _write_verdicts(run_dir, "neural", verdicts)
        write_json(run_dir / "levels.json", levels)
        roa: Optional[float] = None
        if cfg.bench.roa:
            try:
                roa = verify_closed_loop_roa(sys, cost, net, cert, upper=levels.c2 or levels.c1,
                                             config=cfg.verify, threads=workers, verdicts=roa_verdicts)
            finally:
                _write_verdicts(run_dir, "roa", roa_verdicts)
    except HANDLED_ERRORS as e:
        _fail(e)

    table = Table(title=f"Neural CLF for {sys.name}")
    table.add_column("level")
    table.add_column("value", justify="right")
    table.add_row("c1", f"{levels.c1:.6g}")
    table.add_row("c2", "not verified" if levels.c2 is None else f"{levels.c2:.6g}")
    if cfg.bench.roa:
        table.add_row("closed-loop ROA", "not verified" if roa is None else f"{roa:.6g}")
    console.print(table)
    if levels.c2 is None or (cfg.bench.roa and roa is None):
        raise typer.Exit(code=EXIT_UNVERIFIED)


@app.command(context_settings=OVERRIDES)
def simulate(
    ctx: typer.Context,
    config: Optional[Path] = ConfigOption,
    benchmark: Optional[str] = BenchmarkOption,
    system: Optional[Path] = SystemOption,
    out: Optional[Path] = OutOption,
    model: Optional[Path] = typer.Option(None, "--model", "-m", help="Trained network (model.json)."),
    certificate: Optional[Path] = typer.Option(None, "--certificate", help="Quadratic certificate."),
    controller: List[str] = typer.Option(
        ["neural_hjb", "sontag"], "--controller",
        help="lqr, sontag, sontag_quadratic, neural_hjb or hybrid; repeat to compare."),
) -> None:
    """Simulate closed loops from the configured initial states and compare costs."""
    try:
        fallback = model.parent / "config.json" if model is not None else None
        cfg = _run_config(ctx, config, fallback=fallback, **_common(benchmark, system, None, None, None))
        default_out = model.parent if model is not None else None
        sys, cost, run_dir, _ = _prepare(cfg, out, None, default_out=default_out)
        cert_path = certificate or run_dir / "certificate.json"
        cert = _read_record(QuadraticCertificate, cert_path) if cert_path.exists() else None
        net = _load_network(model) if model is not None else None
        controllers = {
            cost_label(kind): make_controller(kind, sys, cost, cert=cert, net=net,
                                              hysteresis=cfg.simulate.hysteresis)
            for kind in controller
        }
        costs = []
        for index, x0 in enumerate(cfg.simulate.x0 or default_initial_conditions(sys)):
            comparison = compare_costs(sys, cost, controllers, x0, cfg.simulate.T, cfg.simulate.blowup)
            for name, trajectory in comparison.pop("trajectories").items():
                trajectory.write_csv(run_dir / "traj" / f"{name}_{index}.csv")
            costs.append(comparison)
        write_json(run_dir / "costs.json", costs)
    except HANDLED_ERRORS as e:
        _fail(e)

    table = Table(title=f"Closed-loop costs for {sys.name} (T = {cfg.simulate.T:g})")
    table.add_column("x0")
    for label in controllers:
        table.add_column(f"J {label}", justify="right")
    for row in costs:
        table.add_row(str(np.round(row["x0"], 4).tolist()), *(f"{row[f'J_{label}']:.6g}" for label in controllers))
    console.print(table)


@app.command(context_settings=OVERRIDES)
def pipeline(
    ctx: typer.Context,
    config: Optional[Path] = ConfigOption,
    benchmark: Optional[str] = BenchmarkOption,
    system: Optional[Path] = SystemOption,
    out: Optional[Path] = OutOption,
    threads: Optional[int] = ThreadsOption,
    seed: Optional[int] = SeedOption,
    backend: Optional[VerifyBackend] = BackendOption,
    delta: Optional[float] = DeltaOption,
) -> None:
    """Run qclf → pmp-data → train → verify → simulate → figures for one system."""
    try:
        cfg = _run_config(ctx, config, **_common(benchmark, system, seed, backend, delta))
        resolve_system(cfg.benchmark, cfg.system)
        attach_run_log(Path(out or cfg.out))
        report = run_pipeline(cfg, out=out, threads=resolve_threads(threads, cfg.threads))
    except HANDLED_ERRORS as e:
        _fail(e)

    table = Table(title=f"Pipeline report for {report.benchmark}")
    table.add_column("quantity")
    table.add_column("value", justify="right")
    table.add_row("c_P", f"{report.certificate.get('c_P', 0.0):.6g}")
    levels = report.verification.get("levels", {})
    table.add_row("c1", f"{levels.get('c1', 0.0):.6g}")
    table.add_row("c2", "not verified" if levels.get("c2") is None else f"{levels['c2']:.6g}")
    if "roa" in report.verification:
        roa = report.verification["roa"]
        table.add_row("closed-loop ROA", "not verified" if roa is None else f"{roa:.6g}")
    for key in ("V_P", "W_N", "ratio"):
        if key in report.areas:
            table.add_row(f"area {key}", f"{report.areas[key]:.4g}")
    console.print(table)
    if not verification_passed(report):
        raise typer.Exit(code=EXIT_UNVERIFIED)


@app.command("export-grid", context_settings=OVERRIDES)
def export_grid(
    ctx: typer.Context,
    config: Optional[Path] = ConfigOption,
    benchmark: Optional[str] = BenchmarkOption,
    system: Optional[Path] = SystemOption,
    out: Optional[Path] = OutOption,
    certificate: Optional[Path] = typer.Option(None, "--certificate", help="Quadratic certificate."),
    model: Optional[Path] = typer.Option(None, "--model", "-m", help="Export W_N of this network instead of V_P."),
    resolution: Optional[int] = typer.Option(None, "--resolution", min=2, help="Points per axis."),
    scale: float = typer.Option(1.0, "--scale", min=1.0, help="Scale of the grid box relative to the domain."),
) -> None:
    """Write a level-set grid (CSV + JSON metadata) of V_P or W_N."""
    try:
        fallback = model.parent / "config.json" if model is not None else None
        cfg = _run_config(ctx, config, fallback=fallback, **_common(benchmark, system, None, None, None))
        default_out = model.parent if model is not None else None
        sys, _, run_dir, _ = _prepare(cfg, out, None, default_out=default_out)
        box = sys.domain.scaled(scale)
        points = resolution or cfg.bench.grid_resolution
        if model is not None:
            fn = NeuralLevelFunction(_load_network(model))
            levels_path = run_dir / "levels.json"
            levels: Dict[str, float] = {}
            if levels_path.exists():
                found = _read_record(NeuralLevels, levels_path)
                levels = {"c1": found.c1, **({"c2": found.c2} if found.c2 is not None else {})}
            target = run_dir / "grids" / "W_N.csv"
        else:
            cert_path = certificate or run_dir / "certificate.json"
            if not cert_path.exists():
                raise ConfigError(f"no certificate at {cert_path}; run 'zubov-clf qclf' first")
            cert = _read_record(QuadraticCertificate, cert_path)
            fn = ExpressionFunction.quadratic(cert.P_matrix)
            levels = {"c_P1": cert.c_P1, "c_P": cert.c_P}
            target = run_dir / "grids" / "V_P.csv"
        if scale != 1.0:
            target = target.with_name(f"{target.stem}_x{scale:g}.csv")
        path = export_levelset_grid(fn, box, points, levels, target)
    except HANDLED_ERRORS as e:
        _fail(e)
    except ValueError as e:
        _fail(ConfigError(str(e)))
    console.print(f"grid {points}^{sys.n} → {path}")


def run() -> None:
    """Console-script entry point."""
    app()


if __name__ == "__main__":
    run()
