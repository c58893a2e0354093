"""File formats: distribution files, radial-profile CSV, sweep CSV and JSON reports.

Every writer goes through a temporary file in the target directory followed by
os.replace, so readers never see a partially written file.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import UsageError
from .grid import DistributionFunction, PhaseGrid

PROFILE_FIELDS = ("r", "rho", "m", "lambda", "mu", "p")
DISTRIBUTION_FORMAT = "evcasimir-distribution-1"


def _clean(obj):
    """JSON-safe copy: numpy scalars and arrays become Python values, NaN/inf become None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def atomic_write_bytes(path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, obj) -> Path:
    return atomic_write_text(path, dumps(obj))


def read_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# -- distributions

def write_distribution(path, f: DistributionFunction, params: dict | None = None,
                       sidecar: bool = False) -> Path:
    """JSON header with the cell edges, k and params; values in row-major (r, v, mu) order,
    inline or in a raw little-endian float64 file next to the header."""
    path = Path(path)
    doc = {"format": DISTRIBUTION_FORMAT, "grid": f.grid.to_dict(), "k": f.k, "params": params,
           "shape": list(f.grid.shape)}
    flat = np.ascontiguousarray(f.values, dtype="<f8").ravel()
    if sidecar:
        data_name = path.name + ".f64"
        atomic_write_bytes(path.parent / data_name, flat.tobytes())
        doc["values_file"] = data_name
    else:
        doc["values"] = flat.tolist()
    return write_json(path, doc)


def read_distribution(path) -> tuple[DistributionFunction, dict | None]:
    path = Path(path)
    try:
        doc = read_json(path)
        grid = PhaseGrid(np.array(doc["grid"]["r"], float), np.array(doc["grid"]["v"], float),
                         np.array(doc["grid"]["mu"], float))
        if "values_file" in doc:
            raw = (path.parent / doc["values_file"]).read_bytes()
            flat = np.frombuffer(raw, dtype="<f8").astype(float)
        else:
            flat = np.asarray(doc["values"], dtype=float)
        if flat.size != int(np.prod(grid.shape)):
            raise UsageError(f"{path}: {flat.size} values for a grid of shape {grid.shape}")
        return DistributionFunction(grid, flat.reshape(grid.shape), float(doc["k"])), doc.get("params")
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise UsageError(f"{path}: not a distribution file ({exc})") from exc


# -- CSV

def _fmt(v) -> str:
    if v is None:
        return ""
    x = float(v)
    return repr(x) if math.isfinite(x) else ""


def profile_csv(columns: dict) -> str:
    """CSV with header r,rho,m,lambda,mu,p; absent columns are left empty."""
    n = len(columns["r"])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PROFILE_FIELDS)
    for i in range(n):
        w.writerow([_fmt(None if columns.get(name) is None else columns[name][i])
                    for name in PROFILE_FIELDS])
    return buf.getvalue()


def write_profile(path, columns: dict) -> Path:
    return atomic_write_text(path, profile_csv(columns))


def read_profile(path) -> dict[str, np.ndarray | None]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if tuple(header) != PROFILE_FIELDS:
        raise UsageError(f"{path}: unexpected profile header {header}")
    out = {}
    for j, name in enumerate(header):
        col = [row[j] for row in body]
        out[name] = None if all(c == "" for c in col) else np.array(
            [float(c) if c else np.nan for c in col])
    return out


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if not rows:
        return ""
    w.writerow(rows[0].CSV_FIELDS)
    for row in rows:
        w.writerow(row.csv_values())
    return buf.getvalue()


def read_sweep(path) -> list[dict[str, float]]:
    with open(path, encoding="utf-8", newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]
