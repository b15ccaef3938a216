"""
Run configuration loading for the zubov_clf command line.

A run is configured by an optional JSON or YAML file plus dotted
overrides from the command line (``--verify.delta 1e-4`` or
``verify.delta=1e-4``). Overrides are applied on the raw mapping before
validation, so the command line always wins over the file.
"""

import os
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence, Union

import yaml
from pydantic import ValidationError

from .errors import ConfigError
from .logging_config import get_logger
from .models import RunConfig
from .storage import read_mapping

logger = get_logger(__name__)

ENV_THREADS_KEY = "ZUBOV_CLF_THREADS"


# =============================================================================
# Overrides
# =============================================================================

def parse_value(text: str) -> Any:
    """YAML scalar parsing: ``1e-4`` → float, ``true`` → bool, ``[1, 2]`` → list."""
    try:
        value = yaml.safe_load(text)
    except yaml.YAMLError:
        return text
    if isinstance(value, str):
        # YAML 1.1 reads exponent floats without a dot (1e-4) as strings
        try:
            return float(value)
        except ValueError:
            return value
    return value


def parse_overrides(args: Sequence[str]) -> Dict[str, Any]:
    """
    Turn extra command-line arguments into ``{dotted.path: value}``.

    Accepts ``--a.b value``, ``--a.b=value`` and ``a.b=value``.

    Raises:
        ConfigError: a flag without a value or a stray positional argument
    """
    overrides: Dict[str, Any] = {}
    items = list(args)
    i = 0
    while i < len(items):
        item = items[i]
        if item.startswith("--"):
            key = item[2:]
            if "=" in key:
                key, text = key.split("=", 1)
            else:
                if i + 1 >= len(items):
                    raise ConfigError(f"option '{item}' needs a value")
                text = items[i + 1]
                i += 1
        elif "=" in item:
            key, text = item.split("=", 1)
        else:
            raise ConfigError(f"unexpected argument '{item}'")
        if not key:
            raise ConfigError(f"empty option name in '{item}'")
        overrides[key.replace("-", "_")] = parse_value(text)
        i += 1
    return overrides


def set_dotted(mapping: Dict[str, Any], path: str, value: Any) -> None:
    """Set ``mapping[a][b][c] = value`` for ``path = "a.b.c"``, creating levels."""
    keys = path.split(".")
    node = mapping
    for key in keys[:-1]:
        child = node.get(key)
        if child is None:
            child = node[key] = {}
        elif not isinstance(child, dict):
            raise ConfigError(f"cannot set '{path}': '{key}' is not a section")
        node = child
    node[keys[-1]] = value


# =============================================================================
# Loading
# =============================================================================

def _dotted(loc: Sequence[Union[str, int]]) -> str:
    return ".".join(str(part) for part in loc) or "<root>"


def build_run_config(data: Mapping[str, Any]) -> RunConfig:
    """
    Validate a raw mapping.

    Raises:
        ConfigError: validation failed; the message names the dotted path
    """
    try:
        return RunConfig.model_validate(dict(data))
    except ValidationError as e:
        first = e.errors()[0]
        path = _dotted(first.get("loc", ()))
        details = "; ".join(f"{_dotted(err.get('loc', ()))}: {err.get('msg')}" for err in e.errors())
        raise ConfigError(f"invalid configuration at '{path}': {details}") from e


def load_run_config(path: Optional[Union[str, Path]] = None,
                    overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """
    Read the optional config file, apply overrides, validate.

    A None override sets the key to null; callers leave unset options out.
    """
    data: Dict[str, Any] = read_mapping(path) if path is not None else {}
    for key, value in (overrides or {}).items():
        set_dotted(data, key, value)
    if path is not None:
        logger.info("Loaded configuration from %s", path)
    return build_run_config(data)


def resolve_threads(cli: Optional[int], config: Optional[int] = None) -> int:
    """Command line, then config, then ZUBOV_CLF_THREADS, then the CPU count."""
    if cli is not None:
        return max(1, cli)
    if config is not None:
        return max(1, config)
    env = os.getenv(ENV_THREADS_KEY)
    if env:
        try:
            return max(1, int(env))
        except ValueError as e:
            raise ConfigError(f"{ENV_THREADS_KEY} must be an integer, got '{env}'") from e
    return os.cpu_count() or 1
