"""
report_utils.py

Shared output plumbing: timestamped logging, atomic JSON writes, CSV tables.

Environment:
    ILO_LOG_FILE   append every log line to this file as well (optional)
    ILO_QUIET      "1" silences console output (file logging continues)
    ILO_OUT_DIR    default output directory when no --out is given
"""

import json
import math
import os
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

import numpy as np
import pandas as pd

DEFAULT_OUT_DIR = "output"

BENCH_COLUMNS = [
    "trial", "method", "value", "m", "k", "p", "n",
    "true_mse", "meas_mse", "steps_total", "seconds", "seed",
]
BOUND_COLUMNS = ["d", "r", "delta", "bound_maurey", "bound_volumetric", "bound_sudakov"]
COMPLEXITY_COLUMNS = ["k", "p", "K", "gamma", "delta", "m", "additive_error_term"]

_quiet_override: Optional[bool] = None


def utc() -> str:
    return datetime.now(timezone.utc).isoformat().replace("+00:00", "Z")


def set_quiet(quiet: bool) -> None:
    global _quiet_override
    _quiet_override = bool(quiet)


def is_quiet() -> bool:
    if _quiet_override is not None:
        return _quiet_override
    return os.getenv("ILO_QUIET", "0") == "1"


def _filelog(line: str, path: str) -> None:
    try:
        with open(path, "a", encoding="utf-8") as f:
            f.write(line.rstrip("\n") + "\n")
    except Exception:
        # logging must never take a run down
        pass


def log(msg: str, tag: str = "ilo") -> None:
    line = f"[{utc()}] [{tag}] {msg}"
    if not is_quiet():
        print(line, flush=True)
    path = os.getenv("ILO_LOG_FILE")
    if path:
        _filelog(line, path)


def out_dir() -> Path:
    return Path(os.getenv("ILO_OUT_DIR", DEFAULT_OUT_DIR))


# ---------- JSON ----------

def _jsonable(o: Any) -> Any:
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating, float)):
        v = float(o)
        # strict JSON has no inf/nan
        return v if math.isfinite(v) else None
    if isinstance(o, np.bool_):
        return bool(o)
    return o


def write_json(path: Union[str, Path], payload: Dict[str, Any]) -> Path:
    """Atomic write: dump to <path>.tmp then replace."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    tmp = p.with_suffix(p.suffix + ".tmp")
    tmp.write_text(json.dumps(_jsonable(payload), indent=2, allow_nan=False), encoding="utf-8")
    tmp.replace(p)
    return p


# ---------- CSV ----------

def write_csv(path: Union[str, Path], rows: Union[pd.DataFrame, Iterable[Dict[str, Any]]],
              columns: Optional[List[str]] = None) -> Path:
    df = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows))
    if columns is not None:
        df = df.reindex(columns=columns)
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    tmp = p.with_suffix(p.suffix + ".tmp")
    df.to_csv(tmp, index=False)
    tmp.replace(p)
    return p


def bench_summary(rows: pd.DataFrame) -> pd.DataFrame:
    """
    Per sweep value: median true/meas MSE per method and the fraction of
    paired trials where ILO's true_mse is <= CSGM's.
    """
    if rows.empty:
        return pd.DataFrame(columns=["value", "m", "trials", "csgm_true_mse", "ilo_true_mse",
                                     "csgm_meas_mse", "ilo_meas_mse", "ilo_win_rate"])
    med = (
        rows.groupby(["value", "m", "method"])[["true_mse", "meas_mse"]]
        .median()
        .unstack("method")
    )
    med.columns = [f"{method}_{metric}" for metric, method in med.columns]
    med = med.reset_index()

    wide = rows.pivot_table(index=["value", "m", "trial"], columns="method", values="true_mse").reset_index()
    if {"csgm", "ilo"} <= set(wide.columns):
        wide["ilo_win"] = (wide["ilo"] <= wide["csgm"]).astype(float)
        wins = wide.groupby(["value", "m"]).agg(trials=("trial", "count"), ilo_win_rate=("ilo_win", "mean"))
    else:
        wins = wide.groupby(["value", "m"]).agg(trials=("trial", "count"))
        wins["ilo_win_rate"] = np.nan
    return med.merge(wins.reset_index(), on=["value", "m"], how="left")
