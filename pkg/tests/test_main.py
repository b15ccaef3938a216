"""
Test Suite: Command-Line Interface

PURPOSE: Validate the zubov-clf commands end to end on tiny systems
COVERAGE: zubov_clf/main.py

Tests cover:
- Version output and exit-code mapping
- qclf with both backends and the artifacts it writes
- pmp-data, train and simulate on a scalar system
- Usage errors (unknown benchmark, bad overrides, missing inputs)
"""

import numpy as np
import pytest
import yaml
from typer.testing import CliRunner

from zubov_clf import __version__
from zubov_clf.errors import (
    CertificateRejectedError,
    ConfigError,
    PipelineStageError,
    TPBVPError,
    UnknownBenchmarkError,
)
from zubov_clf.main import EXIT_NUMERIC, EXIT_UNVERIFIED, EXIT_USAGE, app, exit_code_for
from zubov_clf.storage import read_json, read_jsonl


runner = CliRunner()


@pytest.fixture
def stable_line_file(tmp_path):
    """ẋ = -x with no effective input, as a YAML system file."""
    path = tmp_path / "stable_line.yaml"
    path.write_text(yaml.safe_dump({
        "name": "stable_line", "n": 1, "k": 1,
        "f": ["-x1"], "g": [["0"]], "domain": [[-5.0, 5.0]],
    }))
    return path


@pytest.fixture
def integrator_file(tmp_path):
    """ẋ = u with q = x², as a YAML system file."""
    path = tmp_path / "integrator.yaml"
    path.write_text(yaml.safe_dump({
        "name": "integrator", "n": 1, "k": 1,
        "f": ["0"], "g": [["1"]], "domain": [[-1.0, 1.0]],
    }))
    return path


# ============================================================================
# Global options and error mapping
# ============================================================================

class TestGlobal:
    """Version and exit codes."""

    def test_version(self):
        """--version prints the package version and exits cleanly."""
        result = runner.invoke(app, ["--version"])
        assert result.exit_code == 0
        assert f"zubov-clf {__version__}" in result.output

    @pytest.mark.parametrize("error,code", [
        (ConfigError("x"), EXIT_USAGE),
        (UnknownBenchmarkError("x"), EXIT_USAGE),
        (CertificateRejectedError("x"), EXIT_UNVERIFIED),
        (TPBVPError("x"), EXIT_NUMERIC),
        (PipelineStageError("verify", CertificateRejectedError("x")), EXIT_UNVERIFIED),
        (PipelineStageError("system", ConfigError("x")), EXIT_USAGE),
        (PipelineStageError("train"), EXIT_NUMERIC),
    ])
    def test_exit_code_for(self, error, code):
        """Package errors map to 1, 2 or 3; stage errors follow their cause."""
        assert exit_code_for(error) == code


# ============================================================================
# qclf
# ============================================================================

class TestQclf:
    """Quadratic certificate command."""

    def test_native(self, stable_line_file, tmp_path):
        """Writes the certificate, verdicts and the effective configuration."""
        out = tmp_path / "run"
        result = runner.invoke(app, ["qclf", "--system", str(stable_line_file), "-o", str(out),
                                     "-j", "1", "--delta", "1e-3"])
        assert result.exit_code == 0, result.output
        cert = read_json(out / "certificate.json")
        assert np.allclose(cert["P"], [[0.5]])
        assert cert["c_P"] == pytest.approx(12.5, rel=0.02)
        assert (out / "verify" / "qclf.json").exists()
        assert (out / "run.log").exists()
        assert read_json(out / "config.json")["verify"]["delta"] == pytest.approx(1e-3)

    def test_smtlib_backend(self, stable_line_file, tmp_path):
        """The SMT-LIB2 backend also writes the unbounded global query."""
        out = tmp_path / "run"
        result = runner.invoke(app, ["qclf", "--system", str(stable_line_file), "-o", str(out),
                                     "--backend", "smtlib", "-j", "1"])
        assert result.exit_code == 0, result.output
        query = (out / "qclf" / "global.smt2").read_text()
        assert "(check-sat)" in query
        assert "not run" in result.output

    def test_dotted_overrides(self, stable_line_file, tmp_path):
        """Unrecognized --a.b options become configuration overrides."""
        out = tmp_path / "run"
        result = runner.invoke(app, ["qclf", "--system", str(stable_line_file), "-o", str(out),
                                     "--verify.budget", "5000", "--verify.tolerance=0.1"])
        assert result.exit_code == 0, result.output
        saved = read_json(out / "config.json")["verify"]
        assert saved["budget"] == 5000
        assert saved["tolerance"] == pytest.approx(0.1)

    def test_unknown_benchmark(self, tmp_path):
        """An unknown benchmark is a usage error."""
        result = runner.invoke(app, ["qclf", "-b", "lorenz", "-o", str(tmp_path / "run")])
        assert result.exit_code == EXIT_USAGE

    def test_invalid_override(self, stable_line_file, tmp_path):
        """A value that fails validation is a usage error."""
        result = runner.invoke(app, ["qclf", "--system", str(stable_line_file), "-o", str(tmp_path / "run"),
                                     "--verify.delta=-1"])
        assert result.exit_code == EXIT_USAGE

    def test_stray_argument(self, stable_line_file, tmp_path):
        """Positional words are rejected."""
        result = runner.invoke(app, ["qclf", "--system", str(stable_line_file), "-o", str(tmp_path / "run"),
                                     "extra"])
        assert result.exit_code == EXIT_USAGE


# ============================================================================
# Data and training
# ============================================================================

class TestDataAndTraining:
    """pmp-data, train and simulate."""

    def test_pmp_data_train_simulate(self, integrator_file, tmp_path):
        """pmp-data feeds train; simulate names the HJB costs like the pipeline does."""
        out = tmp_path / "run"
        common = ["--system", str(integrator_file), "-o", str(out)]
        result = runner.invoke(app, ["pmp-data", *common, "-j", "1",
                                     "--pmp.n_samples", "3", "--pmp.T", "5", "--pmp.N", "40"])
        assert result.exit_code == 0, result.output
        records = list(read_jsonl(out / "dataset.jsonl"))
        assert 0 < len(records) <= 3

        result = runner.invoke(app, ["train", *common, "--train.hidden=[4]", "--train.epochs", "1",
                                     "--train.n_collocation", "32", "--train.batch_size", "16"])
        assert result.exit_code == 0, result.output
        assert (out / "model.json").exists()
        assert (out / "history.csv").exists()

        result = runner.invoke(app, ["simulate", "--system", str(integrator_file), "-m", str(out / "model.json"),
                                     "--simulate.x0=[[0.5]]", "--simulate.T", "1"])
        assert result.exit_code == 0, result.output
        costs = read_json(out / "costs.json")
        assert len(costs) == 1
        assert set(costs[0]) >= {"x0", "J_hjb", "J_sontag", "T"}
        assert "J_neural_hjb" not in costs[0]
        assert (out / "traj" / "hjb_0.csv").exists()

    def test_train_missing_dataset(self, integrator_file, tmp_path):
        """An explicit --dataset that does not exist is a usage error."""
        result = runner.invoke(app, ["train", "--system", str(integrator_file), "-o", str(tmp_path / "run"),
                                     "--dataset", str(tmp_path / "missing.jsonl")])
        assert result.exit_code == EXIT_USAGE


# ============================================================================
# Missing inputs
# ============================================================================

class TestMissingInputs:
    """Stages that depend on earlier artifacts."""

    def test_verify_without_certificate(self, stable_line_file, tmp_path):
        """verify needs the certificate of a previous qclf run."""
        model = tmp_path / "run" / "model.json"
        result = runner.invoke(app, ["verify", "--system", str(stable_line_file), "-m", str(model)])
        assert result.exit_code == EXIT_USAGE

    def test_export_grid_without_certificate(self, stable_line_file, tmp_path):
        """export-grid of V_P needs a certificate."""
        result = runner.invoke(app, ["export-grid", "--system", str(stable_line_file), "-o", str(tmp_path / "run")])
        assert result.exit_code == EXIT_USAGE

    def test_export_grid_after_qclf(self, stable_line_file, tmp_path):
        """V_P grids are written next to the certificate, scaled grids get a suffix."""
        out = tmp_path / "run"
        common = ["--system", str(stable_line_file), "-o", str(out)]
        assert runner.invoke(app, ["qclf", *common, "-j", "1"]).exit_code == 0
        result = runner.invoke(app, ["export-grid", *common, "--resolution", "5"])
        assert result.exit_code == 0, result.output
        assert (out / "grids" / "V_P.csv").exists()
        meta = read_json(out / "grids" / "V_P.json")
        assert meta["resolution"] == 5
        result = runner.invoke(app, ["export-grid", *common, "--resolution", "5", "--scale", "2"])
        assert result.exit_code == 0, result.output
        assert (out / "grids" / "V_P_x2.csv").exists()
