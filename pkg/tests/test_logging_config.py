"""
Test Suite: Logging Configuration

PURPOSE: Validate level resolution, the terminal handler and per-run log files
COVERAGE: zubov_clf/logging_config.py
"""

import logging

import pytest

from zubov_clf.logging_config import (
    ENV_LOG_LEVEL_KEY,
    RUN_LOG_NAME,
    attach_run_log,
    detach_run_log,
    get_logger,
    quiet_numerics,
    resolve_level,
    setup_logging,
)


@pytest.fixture(autouse=True)
def restore_package_logger():
    """Leave the package logger as the test found it."""
    package = logging.getLogger("zubov_clf")
    level, handlers = package.level, list(package.handlers)
    yield
    detach_run_log()
    package.setLevel(level)
    package.handlers[:] = handlers


class TestLevels:
    """Level resolution."""

    def test_explicit_name_wins(self, monkeypatch):
        """--log-level beats the environment."""
        monkeypatch.setenv(ENV_LOG_LEVEL_KEY, "ERROR")
        assert resolve_level("debug") == logging.DEBUG

    def test_environment(self, monkeypatch):
        """ZUBOV_LOG_LEVEL is read when no name is given."""
        monkeypatch.setenv(ENV_LOG_LEVEL_KEY, "WARNING")
        assert resolve_level() == logging.WARNING

    def test_unknown_falls_back_to_info(self, monkeypatch):
        """Unknown names give INFO."""
        monkeypatch.delenv(ENV_LOG_LEVEL_KEY, raising=False)
        assert resolve_level("chatty") == logging.INFO
        assert resolve_level() == logging.INFO


class TestSetup:
    """Handlers."""

    def test_idempotent(self):
        """Repeated setup adjusts the level without adding handlers."""
        package = logging.getLogger("zubov_clf")
        setup_logging("INFO")
        count = len(package.handlers)
        assert setup_logging("DEBUG") == logging.DEBUG
        assert len(package.handlers) == count
        assert package.level == logging.DEBUG

    def test_quiet_numerics(self):
        """Numerical libraries stay at WARNING unless DEBUG is requested."""
        quiet_numerics(logging.INFO)
        assert logging.getLogger("scipy").level == logging.WARNING
        quiet_numerics(logging.DEBUG)
        assert logging.getLogger("scipy").level == logging.DEBUG
        quiet_numerics(logging.INFO)

    def test_run_log(self, tmp_path):
        """Package records are mirrored into the run directory."""
        setup_logging("INFO")
        path = attach_run_log(tmp_path / "run")
        get_logger("zubov_clf.pmp").info("solved %d problems", 3)
        detach_run_log()
        assert path == tmp_path / "run" / RUN_LOG_NAME
        assert "solved 3 problems" in path.read_text()

    def test_run_log_switches_directory(self, tmp_path):
        """Attaching a second run log closes the first."""
        setup_logging("INFO")
        first = attach_run_log(tmp_path / "a")
        second = attach_run_log(tmp_path / "b")
        get_logger("zubov_clf.verify").info("level 0.5 proved")
        detach_run_log()
        assert "level 0.5 proved" not in first.read_text()
        assert "level 0.5 proved" in second.read_text()
