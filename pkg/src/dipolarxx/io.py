"""Run directories and tabular output."""
from __future__ import annotations

import csv
import json
import os

import numpy as np


class RunDirExists(FileExistsError):
    pass


def make_run_dir(path) -> str:
    """Create a fresh run directory; existing non-empty directories are refused."""
    path = os.fspath(path)
    if os.path.exists(path) and (not os.path.isdir(path) or os.listdir(path)):
        raise RunDirExists(f"output directory {path!r} already exists and is not empty")
    os.makedirs(os.path.join(path, "checkpoints"), exist_ok=True)
    return path


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_rows(rows, path, columns=None):
    """Write dict rows as CSV; columns default to first-seen key order."""
    if columns is None:
        columns = []
        for r in rows:
            for k in r:
                if k not in columns:
                    columns.append(k)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in columns])
    return path


def read_rows(path) -> list[dict]:
    """Read a CSV written by ``write_rows``; numeric fields become floats."""
    out = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            row = {}
            for k, v in r.items():
                try:
                    row[k] = float(v)
                except (TypeError, ValueError):
                    row[k] = v
            out.append(row)
    return out


def column(rows, key) -> np.ndarray:
    return np.array([r[key] for r in rows], dtype=float)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def write_pjx(pjx: dict, path):
    """P(J^x) tables, one column per recorded time."""
    times = sorted(pjx)
    N = len(next(iter(pjx.values()))) - 1 if pjx else 0
    rows = []
    for k in range(N + 1):
        row = {"m": k - N / 2}
        for t in times:
            row[f"t={t!r}"] = float(pjx[t][k])
        rows.append(row)
    return write_rows(rows, path)


def read_pjx(path) -> dict:
    rows = read_rows(path)
    keys = [k for k in rows[0] if k.startswith("t=")]
    return {float(k[2:]): np.array([r[k] for r in rows]) for k in keys}
