"""
Run Persistence
===============

Run directories are written into ``<out>/.tmp-<name>-<pid>`` and renamed
into place only when the block completes, so a failed command never
leaves a partial run behind. Every finished run directory holds a
``manifest.json`` with the sha256 of the resolved config and of every
written file.
"""

import csv
import hashlib
import json
import logging
import os
import shutil
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np

logger = logging.getLogger(__name__)

LEADERBOARD_FIELDS = ("method", "seed", "setting", "metric", "value")


class RunStoreError(Exception):
    """Exception raised for unreadable or incomplete run directories."""

    pass


def _default(obj: Any) -> Any:
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if hasattr(obj, "model_dump"):
        return obj.model_dump(by_alias=True, mode="json")
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def to_json_text(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True, default=_default, ensure_ascii=False)


def config_hash(config: Any) -> str:
    """sha256 of the canonical JSON rendering of a config (model or mapping)."""
    return hashlib.sha256(to_json_text(config).encode("utf-8")).hexdigest()


def write_json(path: Union[str, Path], data: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(to_json_text(data))
    return path


def read_json(path: Union[str, Path]) -> Any:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise RunStoreError(f"Failed to read {path}: {str(e)}") from e


def write_csv(path: Union[str, Path], rows: Iterable[Sequence[Any]], header: Sequence[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def append_leaderboard(path: Union[str, Path], rows: Iterable[Mapping[str, Any]]) -> Path:
    """Append rows to a leaderboard CSV, writing the header on first use."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    new_file = not path.exists()
    with open(path, "a", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=LEADERBOARD_FIELDS)
        if new_file:
            writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in LEADERBOARD_FIELDS})
    return path


def read_leaderboard(path: Union[str, Path]) -> List[Dict[str, Any]]:
    """
    Read a leaderboard CSV.

    Returns
    -------
    list of dict
        Rows with ``seed`` as int and ``value`` as float.

    Raises
    ------
    RunStoreError
        If the file is missing or malformed.
    """
    path = Path(path)
    if not path.exists():
        raise RunStoreError(f"Leaderboard not found: {path}")
    try:
        with open(path, "r", newline="") as f:
            rows = list(csv.DictReader(f))
        for row in rows:
            row["seed"] = int(row["seed"])
            row["value"] = float(row["value"])
    except (OSError, csv.Error, KeyError, ValueError) as e:
        raise RunStoreError(f"Malformed leaderboard {path}: {str(e)}") from e
    return rows


def _file_hash(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


class RunWriter:
    """
    Context manager writing one run directory atomically.

    Parameters
    ----------
    out_dir : str or Path
        Parent directory.
    name : str
        Name of the final run directory.
    config : object, optional
        Resolved configuration; stored as ``config.json`` and hashed into
        the manifest.
    overwrite : bool
        Replace an existing run directory of the same name.

    Examples
    --------
    >>> with RunWriter(tmp, "demo", config={"a": 1}) as run:   # doctest: +SKIP
    ...     run.write_json("result.json", {"value": 1.0})
    """

    def __init__(self, out_dir: Union[str, Path], name: str, config: Any = None, overwrite: bool = True):
        self.out_dir = Path(out_dir)
        self.name = name
        self.config = config
        self.overwrite = overwrite
        self.final_path = self.out_dir / name
        self.tmp_path = self.out_dir / f".tmp-{name}-{os.getpid()}"
        self.extra_manifest: Dict[str, Any] = {}

    def __enter__(self) -> "RunWriter":
        if self.final_path.exists() and not self.overwrite:
            raise RunStoreError(f"Run directory already exists: {self.final_path}")
        if self.tmp_path.exists():
            shutil.rmtree(self.tmp_path)
        self.tmp_path.mkdir(parents=True)
        if self.config is not None:
            self.write_json("config.json", self.config)
        return self

    def path(self, relative: str) -> Path:
        """Path inside the temporary directory."""
        target = self.tmp_path / relative
        target.parent.mkdir(parents=True, exist_ok=True)
        return target

    def write_json(self, relative: str, data: Any) -> Path:
        return write_json(self.path(relative), data)

    def write_csv(self, relative: str, rows: Iterable[Sequence[Any]], header: Sequence[str]) -> Path:
        return write_csv(self.path(relative), rows, header)

    def _manifest(self) -> Dict[str, Any]:
        files = {}
        for file in sorted(self.tmp_path.rglob("*")):
            if file.is_file():
                files[file.relative_to(self.tmp_path).as_posix()] = _file_hash(file)
        return {
            "name": self.name,
            "config_sha256": config_hash(self.config) if self.config is not None else None,
            "files": files,
            **self.extra_manifest,
        }

    def __exit__(self, exc_type, exc, tb) -> bool:
        if exc_type is not None:
            shutil.rmtree(self.tmp_path, ignore_errors=True)
            logger.debug(f"Discarded partial run {self.tmp_path}")
            return False
        write_json(self.tmp_path / "manifest.json", self._manifest())
        if self.final_path.exists():
            shutil.rmtree(self.final_path)
        os.replace(self.tmp_path, self.final_path)
        logger.info(f"Run persisted to {self.final_path}")
        return False


def load_run_records(run_dir: Union[str, Path]) -> List[Dict[str, Any]]:
    """All ``runs/*.json`` records of a train directory, sorted by (method, seed)."""
    run_dir = Path(run_dir)
    files = sorted((run_dir / "runs").glob("*.json"))
    if not files:
        raise RunStoreError(f"No run records under {run_dir / 'runs'}")
    records = [read_json(f) for f in files]
    return sorted(records, key=lambda r: (r.get("method", ""), r.get("seed", 0)))


def find_leaderboard(run_dir: Union[str, Path]) -> Optional[Path]:
    path = Path(run_dir) / "leaderboard.csv"
    return path if path.exists() else None
