"""CSV and JSON writers.  Floats use 17 significant digits so every 64-bit value
round-trips exactly."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .bundle import FlowState
from .diagnostics import DiagnosticsRecord, record_rows

TIMESERIES_COLUMNS = ["t", "sup_u", "inf_u", "volume", "F_liouville", "F_energy", "calabi",
                      "sup_grad_f_sq", "diameter", "com_x", "com_y", "com_z"]


def fmt(x) -> str:
    """Round-trip float text; NaN/None become an empty cell."""
    if x is None:
        return ""
    x = float(x)
    if np.isnan(x):
        return ""
    return format(x, ".17g")


def write_timeseries(records: Sequence[DiagnosticsRecord], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TIMESERIES_COLUMNS)
        for row in record_rows(records):
            w.writerow([fmt(row[c]) for c in TIMESERIES_COLUMNS])


def write_snapshot(state: FlowState, path: Path) -> None:
    k = state.spec.k
    verts = state.mesh.vertices
    xyz = np.zeros((state.mesh.n_vertices, 3))
    xyz[:, : verts.shape[1]] = verts
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["vertex", "x", "y", "z", "u"] + [f"f_{i + 1}" for i in range(k)])
        for i in range(state.mesh.n_vertices):
            w.writerow([i, *map(fmt, xyz[i]), fmt(state.u[i]), *map(fmt, state.f[:, i])])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(obj, path: Path) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
