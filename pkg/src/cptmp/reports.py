"""Deterministic JSON and CSV report writing."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1
SUMMARY_COLUMNS = ("scenario", "n_paths", "steps", "seed", "J_total", "mp_rms", "gateaux_gap", "duality_gap",
                   "verdict")
DEFAULT_PATH_LIMIT = 1000


def clean(obj):
    """Convert to plain JSON types; non-finite floats become ``None``."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def dumps(report: dict) -> str:
    body = {"schema": SCHEMA_VERSION, **report}
    return json.dumps(clean(body), sort_keys=True, indent=2, allow_nan=False) + "\n"


def atomic_write(path: Path, text: str) -> None:
    """Write via a temporary file in the same directory and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else ""
    return str(value)


def summary_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    for row in rows:
        writer.writerow([_cell(row.get(c)) for c in SUMMARY_COLUMNS])
    return buf.getvalue()


def table_csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(clean(row.get(c))) for c in columns])
    return buf.getvalue()


def paths_csv(ensemble, limit: int = DEFAULT_PATH_LIMIT) -> str:
    """Long-format path dump: ``path_id, t, X, u`` plus ``Z`` and ``rho`` when present."""
    n = min(int(limit), ensemble.n_paths)
    cols = ["path_id", "t", "X", "u"]
    extra = [name for name in ("Z", "rho") if getattr(ensemble, name) is not None]
    cols += extra
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    t = ensemble.times
    for i in range(n):
        arrays = [ensemble.X[i], ensemble.u[i]] + [getattr(ensemble, name)[i] for name in extra]
        for j in range(t.size):
            writer.writerow([i, repr(float(t[j]))] + [repr(float(a[j])) for a in arrays])
    return buf.getvalue()
