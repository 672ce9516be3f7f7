"""Trace and summary files."""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, fields
from typing import List, Optional

from ..solver import SolverTrace, TraceRow

__all__ = [
    "SUMMARY_COLUMNS",
    "TRACE_COLUMNS",
    "SummaryRow",
    "format_number",
    "format_table",
    "read_summary",
    "read_trace",
    "write_summary",
    "write_trace",
]

TRACE_COLUMNS = ("iter", "loss", "data_term", "balance_term", "tikhonov_term", "delta_fro",
                 "phi_h_err", "E_t", "D_t", "V_t", "regret_avg", "wall_ms")

SUMMARY_COLUMNS = ("preset", "grid_value", "method", "best_iter", "train_rmse", "val_rmse",
                   "delta_fro_final", "wall_s", "x_min", "x_max")


def format_number(v) -> str:
    """Shortest round-trip decimal; ``None`` and NaN become an empty field."""
    if v is None:
        return ""
    if isinstance(v, (bool,)):
        raise TypeError("booleans are not numbers here")
    if isinstance(v, int):
        return str(v)
    v = float(v)
    if math.isnan(v):
        return ""
    return repr(v)


def _parse(text, integer=False):
    if text == "":
        return None
    return int(text) if integer else float(text)


def _write_rows(path, header, rows):
    # newline="" plus an explicit terminator keeps files identical across platforms
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for r in rows:
        buf.write(",".join(r) + "\n")
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


def write_trace(trace, path) -> None:
    """One CSV row per recorded iteration; missing diagnostics are empty."""
    rows = trace.rows if isinstance(trace, SolverTrace) else list(trace)
    out = []
    for r in rows:
        out.append([format_number(getattr(r, c)) for c in TRACE_COLUMNS])
    _write_rows(path, TRACE_COLUMNS, out)


def read_trace(path) -> List[TraceRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != TRACE_COLUMNS:
            raise ValueError(f"{path}: unexpected trace header")
        rows = []
        for rec in reader:
            vals = {c: _parse(t, c == "iter") for c, t in zip(header, rec)}
            rows.append(TraceRow(**vals))
    return rows


@dataclass
class SummaryRow:
    preset: str
    grid_value: str
    method: str
    best_iter: Optional[int] = None
    train_rmse: Optional[float] = None
    val_rmse: Optional[float] = None
    delta_fro_final: Optional[float] = None
    wall_s: Optional[float] = None
    x_min: Optional[float] = None
    x_max: Optional[float] = None

    def cells(self) -> List[str]:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            out.append(v if isinstance(v, str) else format_number(v))
        return out


def write_summary(rows, path) -> None:
    _write_rows(path, SUMMARY_COLUMNS, [r.cells() for r in rows])


def read_summary(path) -> List[SummaryRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        out = []
        for rec in reader:
            out.append(SummaryRow(
                rec["preset"], rec["grid_value"], rec["method"],
                _parse(rec["best_iter"], True),
                *(_parse(rec[c]) for c in SUMMARY_COLUMNS[4:]),
            ))
    return out


def format_table(rows) -> str:
    """Aligned plain-text table; numbers shown with 6 significant digits."""
    head = list(SUMMARY_COLUMNS)
    body = []
    for r in rows:
        line = []
        for f in fields(r):
            v = getattr(r, f.name)
            if v is None:
                line.append("-")
            elif isinstance(v, str):
                line.append(v)
            elif isinstance(v, int):
                line.append(str(v))
            else:
                line.append(f"{v:.6g}")
        body.append(line)
    widths = [max(len(x) for x in col) for col in zip(head, *body)]
    fmt = lambda cells: "  ".join(c.rjust(w) for c, w in zip(cells, widths)).rstrip()
    return "\n".join([fmt(head)] + [fmt(b) for b in body]) + "\n"
