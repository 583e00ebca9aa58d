"""CSV and JSON writers for the experiment tables."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

TRAJECTORY_COLUMNS = ("replica", "step", "time", "k", "a_k")
VERDICT_COLUMNS = ("check", "T", "lhs", "rhs", "stderr_lhs", "stderr_rhs", "margin", "verdict")
RG_COLUMNS = ("T", "K", "gamma", "epsilon", "delta", "rho", "M", "cov", "cov_stderr", "bound", "C_T")
ISING_COLUMNS = ("N", "K", "r", "exact", "empirical", "stderr")


def fmt(v) -> str:
    """Integers verbatim, floats with 17 significant digits."""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.16e}"
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return f if math.isfinite(f) else str(f)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    return v


def csv_text(columns, rows) -> str:
    lines = [",".join(columns)]
    for r in rows:
        lines.append(",".join(fmt(r[c]) for c in columns))
    return "\n".join(lines) + "\n"


def json_text(columns, rows) -> str:
    return json.dumps([{c: _jsonable(r[c]) for c in columns} for r in rows], indent=1) + "\n"


def write_table(path, columns, rows, out_format: str = "csv") -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    text = csv_text(columns, rows) if out_format == "csv" else json_text(columns, rows)
    p.write_text(text)
    return p


def trajectory_rows(ensemble, first_replica: int = 0):
    """Long-format rows ``(replica, step, time, k, a_k)`` from an ensemble."""
    n_rec, R, N = ensemble.coeffs.shape
    for j in range(n_rec):
        for r in range(R):
            for k in range(N):
                yield {
                    "replica": first_replica + r,
                    "step": int(ensemble.steps[j]),
                    "time": float(ensemble.times[j]),
                    "k": k + 1,
                    "a_k": float(ensemble.coeffs[j, r, k]),
                }


def write_manifest(path, payload: dict) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(_jsonable(payload), indent=1, sort_keys=True) + "\n")
    return p
