"""
Test Suite: Artifact Storage

PURPOSE: Validate JSON, JSON-lines, YAML and CSV helpers
COVERAGE: zubov_clf/storage.py
"""

import numpy as np
import pytest

from zubov_clf.errors import ConfigError
from zubov_clf.models import TransformSpec
from zubov_clf.storage import (
    dumps_json,
    read_csv,
    read_json,
    read_jsonl,
    read_mapping,
    write_csv,
    write_json,
    write_jsonl,
)


class TestJson:
    """Canonical JSON files."""

    def test_sorted_keys_and_models(self, tmp_path):
        """Keys are sorted; pydantic models and numpy arrays serialize."""
        path = write_json(tmp_path / "nested" / "a.json", {"b": np.array([1.0, 2.0]), "a": 1})
        text = path.read_text(encoding="utf-8")
        assert text.index('"a"') < text.index('"b"')
        assert read_json(path) == {"a": 1, "b": [1.0, 2.0]}
        assert not (tmp_path / "nested" / "a.json.tmp").exists()
        model = write_json(tmp_path / "t.json", TransformSpec())
        assert read_json(model) == {"alpha": 0.1, "kind": "tanh"}

    def test_compact(self):
        """Without indentation the output is one line."""
        assert dumps_json({"x": 1}, indent=False) == b'{"x":1}'

    def test_missing_and_invalid(self, tmp_path):
        """Both raise ConfigError."""
        with pytest.raises(ConfigError):
            read_json(tmp_path / "missing.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{", encoding="utf-8")
        with pytest.raises(ConfigError):
            read_json(bad)


class TestMapping:
    """JSON or YAML mappings."""

    def test_yaml(self, tmp_path):
        """YAML by extension."""
        path = tmp_path / "run.yml"
        path.write_text("benchmark: vdp_input\nverify:\n  delta: 0.001\n", encoding="utf-8")
        assert read_mapping(path) == {"benchmark": "vdp_input", "verify": {"delta": 0.001}}

    def test_top_level_must_be_mapping(self, tmp_path):
        """Lists are rejected."""
        path = tmp_path / "list.yaml"
        path.write_text("- 1\n- 2\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            read_mapping(path)

    def test_missing_yaml(self, tmp_path):
        """A missing file is a config error."""
        with pytest.raises(ConfigError):
            read_mapping(tmp_path / "absent.yaml")


class TestJsonLines:
    """One record per line."""

    def test_roundtrip_and_blank_lines(self, tmp_path):
        """Blank lines are skipped; bad lines name their number."""
        path = write_jsonl(tmp_path / "d.jsonl", [{"x": [0.5], "V": 1.0}, {"x": [1.5], "V": 2.0}])
        assert [r["V"] for r in read_jsonl(path)] == [1.0, 2.0]
        path.write_text(path.read_text(encoding="utf-8") + "\n{oops\n", encoding="utf-8")
        with pytest.raises(ConfigError) as exc_info:
            read_jsonl(path)
        assert "line 4" in str(exc_info.value)


class TestCsv:
    """Numeric CSV."""

    def test_full_precision(self, tmp_path):
        """Values survive in round-trip precision."""
        rows = np.array([[0.1, 1.0 / 3.0], [2.0, -1e-300]])
        header, data = read_csv(write_csv(tmp_path / "a.csv", ["x1", "value"], rows))
        assert header == ["x1", "value"]
        assert np.array_equal(data, rows)

    def test_empty(self, tmp_path):
        """No rows still writes the header."""
        path = write_csv(tmp_path / "e.csv", ["t", "J"], np.zeros((0, 2)))
        assert path.read_text(encoding="utf-8").strip() == "t,J"
