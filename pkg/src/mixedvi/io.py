"""Deterministic CSV / JSON writers for run artifacts."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .mesh import Mesh, trace_dofs

OUTPUT_SCHEMA_VERSION = 1


def fmt(x) -> str:
    """Shortest round-trip text for a float; integers and strings pass through."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(x + 0.0)  # +0.0 folds -0.0
    return str(x)


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x + 0.0 if math.isfinite(x) else None
    return obj


def write_json(path: Path, payload: dict) -> None:
    text = json.dumps(_clean(payload), indent=2, sort_keys=True, ensure_ascii=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def write_u(path: Path, mesh: Mesh, u) -> None:
    rows = ((i, x, y, v) for i, ((x, y), v) in enumerate(zip(mesh.nodes, u)))
    write_csv(path, ["node", "x", "y", "u"], rows)


def write_lambda(path: Path, mesh: Mesh, lam) -> None:
    """One row per G3 edge in trace order (the multiplier's dof order)."""
    rows = []
    for k, (e, (a, b), h) in enumerate(trace_dofs(mesh, "G3")):
        xm, ym = (mesh.nodes[a] + mesh.nodes[b]) / 2
        rows.append((k, e, a, b, xm, ym, h, lam[k]))
    write_csv(path, ["edge", "boundary_edge", "node_a", "node_b", "x_mid", "y_mid", "length", "lambda"], rows)


def write_residual_trace(path: Path, diag) -> None:
    rows = []
    k = 0
    for outer, n_inner in enumerate(diag.inner_lengths):
        upd = diag.multiplier_updates[outer] if outer < len(diag.multiplier_updates) else float("nan")
        for inner in range(n_inner):
            rows.append((outer, inner, diag.residual_history[k], upd))
            k += 1
    write_csv(path, ["uzawa_iter", "newton_iter", "residual", "multiplier_update"], rows)
