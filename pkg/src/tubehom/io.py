"""Atomic CSV and manifest persistence."""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig
from .harness import TIME_CONVENTION

MANIFEST_VERSION = 1


def format_value(v) -> str:
    """Floats with 17 significant digits; everything else via str."""
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if not np.isfinite(v) else f"{float(v):.17g}"
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return "" if v is None else str(v)


def atomic_write(path, text: str) -> None:
    """Write to a temporary file in the target directory, then rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, columns: list[str], rows: list[dict]) -> None:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([format_value(r.get(c)) for c in columns])
    atomic_write(path, buf.getvalue())


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj


def write_manifest(out_dir, cfg: RunConfig, command: str, conventions: dict, wall_times: dict,
                   inputs: dict | None = None, results: dict | None = None) -> Path:
    """manifest.json with the resolved config, conventions, wall times and input hashes."""
    out = Path(out_dir)
    hashes = {"config": hashlib.sha256(cfg.canonical_json().encode()).hexdigest()}
    for name, p in (inputs or {}).items():
        hashes[name] = file_hash(p)
    doc = {
        "manifest_version": MANIFEST_VERSION,
        "command": command,
        "version": __version__,
        "config": cfg.data,
        "conventions": dict(conventions, time_convention=TIME_CONVENTION),
        "time_convention": TIME_CONVENTION,
        "wall_times": wall_times,
        "input_hashes": hashes,
    }
    if results is not None:
        doc["results"] = results
    path = out / "manifest.json"
    atomic_write(path, json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")
    return path
