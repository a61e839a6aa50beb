"""
Tests for run persistence.

This module tests atomic run directories, manifests, leaderboards and the
JSON encoder for numpy and pydantic values.
"""

import hashlib
import json

import numpy as np
import pytest

from lipirm.penalties import PenaltyScheme
from lipirm.runs import (
    RunStoreError,
    RunWriter,
    append_leaderboard,
    config_hash,
    find_leaderboard,
    load_run_records,
    read_json,
    read_leaderboard,
    to_json_text,
)


class TestJson:
    """Test JSON rendering."""

    def test_numpy_and_models(self):
        """Test numpy scalars, arrays and pydantic models."""
        text = to_json_text({"a": np.int64(2), "b": np.float32(0.5), "c": np.arange(3), "s": PenaltyScheme(lambda_=0.1)})
        data = json.loads(text)
        assert data["a"] == 2 and data["b"] == 0.5 and data["c"] == [0, 1, 2]
        assert data["s"]["lambda"] == 0.1

    def test_unsupported_type(self):
        """Test that unknown objects are rejected."""
        with pytest.raises(TypeError, match="not JSON serializable"):
            to_json_text({"x": object()})

    def test_config_hash_is_canonical(self):
        """Test that key order does not change the hash."""
        assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
        assert config_hash({"a": 1}) != config_hash({"a": 2})

    def test_read_json_errors(self, tmp_path):
        """Test missing and malformed files."""
        with pytest.raises(RunStoreError, match="Failed to read"):
            read_json(tmp_path / "absent.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{")
        with pytest.raises(RunStoreError):
            read_json(bad)


class TestRunWriter:
    """Test atomic run directories."""

    def test_success_writes_manifest(self, tmp_path):
        """Test that a completed block is renamed into place with file hashes."""
        with RunWriter(tmp_path, "demo", config={"a": 1}) as run:
            run.write_json("result.json", {"value": 1.0})
            run.write_csv("tables/rows.csv", [[1, 2]], ["x", "y"])
        final = tmp_path / "demo"
        manifest = read_json(final / "manifest.json")
        assert set(manifest["files"]) == {"config.json", "result.json", "tables/rows.csv"}
        expected = hashlib.sha256((final / "result.json").read_bytes()).hexdigest()
        assert manifest["files"]["result.json"] == expected
        assert manifest["config_sha256"] == config_hash({"a": 1})
        assert not list(tmp_path.glob(".tmp-*"))

    def test_failure_leaves_nothing(self, tmp_path):
        """Test that an exception discards the partial run."""
        with pytest.raises(RuntimeError):
            with RunWriter(tmp_path, "broken") as run:
                run.write_json("partial.json", {})
                raise RuntimeError("boom")
        assert list(tmp_path.iterdir()) == []

    def test_overwrite(self, tmp_path):
        """Test replacing and refusing to replace an existing run."""
        with RunWriter(tmp_path, "run") as run:
            run.write_json("old.json", {})
        with RunWriter(tmp_path, "run") as run:
            run.write_json("new.json", {})
        assert not (tmp_path / "run" / "old.json").exists()
        with pytest.raises(RunStoreError, match="already exists"):
            with RunWriter(tmp_path, "run", overwrite=False):
                pass

    def test_extra_manifest_fields(self, tmp_path):
        """Test additional manifest entries."""
        with RunWriter(tmp_path, "extra") as run:
            run.extra_manifest["command"] = "train"
        assert read_json(tmp_path / "extra" / "manifest.json")["command"] == "train"


class TestLeaderboard:
    """Test leaderboard files and run records."""

    def test_append_and_read(self, tmp_path):
        """Test that the header is written once and types are restored."""
        path = tmp_path / "leaderboard.csv"
        append_leaderboard(path, [{"method": "rpo", "seed": 0, "setting": "two_bit", "metric": "test_acc", "value": 0.8}])
        append_leaderboard(path, [{"method": "erm_l2", "seed": 1, "metric": "test_acc", "value": 0.6}])
        rows = read_leaderboard(path)
        assert path.read_text().count("method,seed") == 1
        assert rows[1] == {"method": "erm_l2", "seed": 1, "setting": "", "metric": "test_acc", "value": 0.6}

    def test_malformed(self, tmp_path):
        """Test missing and malformed leaderboards."""
        with pytest.raises(RunStoreError, match="not found"):
            read_leaderboard(tmp_path / "absent.csv")
        path = tmp_path / "bad.csv"
        path.write_text("method,seed,setting,metric,value\nrpo,x,s,m,1.0\n")
        with pytest.raises(RunStoreError, match="Malformed"):
            read_leaderboard(path)

    def test_run_records_sorted(self, tmp_path):
        """Test loading per-run records ordered by method and seed."""
        with RunWriter(tmp_path, "train") as run:
            run.write_json("runs/rpo-1.json", {"method": "rpo", "seed": 1})
            run.write_json("runs/rpo-0.json", {"method": "rpo", "seed": 0})
            run.write_json("runs/erm_l2-0.json", {"method": "erm_l2", "seed": 0})
        records = load_run_records(tmp_path / "train")
        assert [(r["method"], r["seed"]) for r in records] == [("erm_l2", 0), ("rpo", 0), ("rpo", 1)]
        assert find_leaderboard(tmp_path / "train") is None

    def test_no_records(self, tmp_path):
        """Test a directory without run records."""
        with pytest.raises(RunStoreError, match="No run records"):
            load_run_records(tmp_path)
