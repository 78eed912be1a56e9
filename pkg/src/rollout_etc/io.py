"""CSV and JSON artifact writers.

Floats are written with 12 significant digits and matrices are flattened
row-major, so identical runs produce identical files.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .sim import SimTrace
from .terminal import TerminalIngredients


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if value is None:
        return ""
    v = float(value)
    if np.isnan(v):
        return "nan"
    if np.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.12g}"


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    return path


def trace_rows(trace: SimTrace):
    """Header and rows of a per-step trace; the final state gets its own row."""
    if not trace.records:
        return [], []
    n = trace.records[0].xi.x.size
    m = trace.records[0].xi.u.size
    header = (
        ["k"]
        + [f"x{i}" for i in range(n)]
        + [f"u{i}" for i in range(m)]
        + ["beta", "gamma"]
        + [f"v{i}" for i in range(m)]
        + ["stage_cost", "cumulative_cost", "ocp_value", "schedules_examined"]
    )
    rows = []
    total = 0.0
    for r in trace.records:
        total += r.stage_cost
        rows.append(
            [r.k, *r.xi.x, *r.xi.u, r.xi.beta, r.pi.gamma, *r.pi.v, r.stage_cost, total,
             r.ocp_value, r.schedules_examined]
        )
    f = trace.final
    k_end = trace.records[-1].k + 1
    rows.append([k_end, *f.x, *f.u, f.beta, "", *([""] * m), "", total, "", ""])
    return header, rows


def write_trace(path, trace: SimTrace) -> Path:
    header, rows = trace_rows(trace)
    return write_csv(path, header, rows)


def write_ingredients(path, ing: TerminalIngredients) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(ing.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def flatten(mat) -> list:
    """Row-major flattening used for matrix columns."""
    return list(np.asarray(mat, dtype=float).reshape(-1))
