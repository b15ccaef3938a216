"""
File I/O for run artifacts.

JSON goes through orjson (sorted keys, 2-space indent, numpy arrays
serialized natively) and is written to a temporary file first, then
renamed, so a crashed run never leaves a half-written artifact behind.
Floats are emitted in shortest round-trip form, so reloading a model
checkpoint reproduces every weight bit for bit.
"""

from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Union

import numpy as np
import orjson
import yaml
from pydantic import BaseModel

from .errors import ConfigError
from .logging_config import get_logger

logger = get_logger(__name__)

PathLike = Union[str, Path]

JSON_OPTIONS = orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY


def _plain(data: Any) -> Any:
    if isinstance(data, BaseModel):
        return data.model_dump(mode="json")
    return data


def dumps_json(data: Any, indent: bool = True) -> bytes:
    """Canonical JSON bytes (sorted keys)."""
    option = JSON_OPTIONS if indent else orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY
    return orjson.dumps(_plain(data), option=option)


def _atomic_write(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    temp_path = path.with_name(path.name + ".tmp")
    with open(temp_path, "wb") as f:
        f.write(payload)
    temp_path.replace(path)


def write_json(path: PathLike, data: Any) -> Path:
    """Write data (mapping, list or pydantic model) as pretty JSON."""
    target = Path(path)
    _atomic_write(target, dumps_json(data) + b"\n")
    logger.debug("Wrote %s", target)
    return target


def read_json(path: PathLike) -> Any:
    target = Path(path)
    try:
        return orjson.loads(target.read_bytes())
    except FileNotFoundError as e:
        raise ConfigError(f"file not found: {target}") from e
    except orjson.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON in {target}: {e}") from e


def read_mapping(path: PathLike) -> Dict[str, Any]:
    """Load a JSON or YAML file (by extension) that must hold a mapping."""
    target = Path(path)
    if target.suffix.lower() in (".yaml", ".yml"):
        try:
            data = yaml.safe_load(target.read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise ConfigError(f"file not found: {target}") from e
        except yaml.YAMLError as e:
            raise ConfigError(f"invalid YAML in {target}: {e}") from e
    else:
        data = read_json(target)
    if not isinstance(data, dict):
        raise ConfigError(f"{target} must contain a mapping at the top level")
    return data


def write_jsonl(path: PathLike, records: Iterable[Any]) -> Path:
    """One compact JSON document per line."""
    target = Path(path)
    option = orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY
    payload = b"".join(orjson.dumps(_plain(r), option=option) + b"\n" for r in records)
    _atomic_write(target, payload)
    return target


def read_jsonl(path: PathLike) -> List[Any]:
    target = Path(path)
    records = []
    with open(target, "rb") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                records.append(orjson.loads(line))
            except orjson.JSONDecodeError as e:
                raise ConfigError(f"invalid JSON on line {line_number} of {target}: {e}") from e
    return records


def write_csv(path: PathLike, header: Sequence[str], rows: np.ndarray) -> Path:
    """Numeric CSV with a header row; values in round-trip precision."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    data = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if data.size == 0:
        data = data.reshape(0, len(header))
    np.savetxt(target, data, delimiter=",", header=",".join(header), comments="", fmt="%.17g")
    return target


def read_csv(path: PathLike) -> tuple[List[str], np.ndarray]:
    target = Path(path)
    with open(target, "r", encoding="utf-8") as f:
        header = f.readline().strip().split(",")
    data = np.loadtxt(target, delimiter=",", skiprows=1, ndmin=2)
    return header, data
