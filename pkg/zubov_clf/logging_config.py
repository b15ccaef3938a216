"""
Logging for zubov_clf.

Progress of long stages (PMP solves, training epochs, branch-and-bound
rounds) is logged, never printed, so tables and artifacts stay clean:

- the terminal gets a rich handler on standard error
- every run directory gets a plain-text ``run.log`` (see attach_run_log)
- ZUBOV_LOG_LEVEL or ``--log-level`` selects the level (default: INFO)

Modules obtain loggers with ``get_logger(__name__)``; nothing is
configured until the command line calls ``setup_logging``, so library use
and pytest capture see plain standard logging.
"""

import logging
import os
from pathlib import Path
from typing import Final, Optional, Union

from rich.console import Console
from rich.logging import RichHandler

FILE_FORMAT: Final[str] = "%(asctime)s | %(name)s | %(levelname)s | %(message)s"
DATE_FORMAT: Final[str] = "%Y-%m-%d %H:%M:%S"
DEFAULT_LOG_LEVEL: Final[str] = "INFO"
ENV_LOG_LEVEL_KEY: Final[str] = "ZUBOV_LOG_LEVEL"
RUN_LOG_NAME: Final[str] = "run.log"

# Libraries whose INFO output drowns the stage progress
NUMERIC_LOGGERS: Final[tuple] = ("numpy", "scipy", "matplotlib")

_console_handler: Optional[logging.Handler] = None
_run_handler: Optional[logging.FileHandler] = None


def resolve_level(name: Optional[str] = None) -> int:
    """
    Level from ``name``, else from ZUBOV_LOG_LEVEL, else INFO.

    Unknown names fall back to INFO.
    """
    text = (name or os.getenv(ENV_LOG_LEVEL_KEY) or DEFAULT_LOG_LEVEL).upper()
    level = logging.getLevelName(text)
    return level if isinstance(level, int) else logging.INFO


def setup_logging(level: Optional[str] = None) -> int:
    """
    Install the terminal handler on the package logger.

    Idempotent: later calls only change the level.

    Returns:
        The effective level
    """
    global _console_handler

    log_level = resolve_level(level)
    package = logging.getLogger("zubov_clf")
    package.setLevel(log_level)

    if _console_handler is None:
        _console_handler = RichHandler(
            console=Console(stderr=True),
            show_path=False,
            rich_tracebacks=False,
            log_time_format="[%X]",
        )
        package.addHandler(_console_handler)
    _console_handler.setLevel(log_level)

    quiet_numerics(log_level)
    return log_level


def attach_run_log(directory: Union[str, Path]) -> Path:
    """
    Mirror package logging into ``<directory>/run.log``.

    A previously attached run log is closed first, so one process writes
    to one run directory at a time.
    """
    global _run_handler

    path = Path(directory) / RUN_LOG_NAME
    package = logging.getLogger("zubov_clf")
    detach_run_log()

    path.parent.mkdir(parents=True, exist_ok=True)
    _run_handler = logging.FileHandler(path, encoding="utf-8")
    _run_handler.setFormatter(logging.Formatter(FILE_FORMAT, DATE_FORMAT))
    _run_handler.setLevel(package.getEffectiveLevel())
    package.addHandler(_run_handler)
    return path


def detach_run_log() -> None:
    """Close the current run log, if any."""
    global _run_handler

    if _run_handler is not None:
        logging.getLogger("zubov_clf").removeHandler(_run_handler)
        _run_handler.close()
        _run_handler = None


def quiet_numerics(level: int) -> None:
    """Keep numerical libraries at WARNING unless DEBUG is requested."""
    target = logging.DEBUG if level <= logging.DEBUG else logging.WARNING
    for name in NUMERIC_LOGGERS:
        logging.getLogger(name).setLevel(target)


def get_logger(name: str) -> logging.Logger:
    """Logger for a package module, typically ``get_logger(__name__)``."""
    return logging.getLogger(name)
