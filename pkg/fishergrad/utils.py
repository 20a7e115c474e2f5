# fishergrad/utils.py
"""Output helpers: atomic writes, CSV rendering, config sidecars."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np


# ----------------------------
# Atomic write helpers
# ----------------------------
def atomic_write_text(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        with tmp.open("w", encoding="utf-8", newline="") as f:
            f.write(text)
        tmp.replace(path)
    except Exception:
        if tmp.exists():
            tmp.unlink()
        raise


def atomic_write_json(path: Path, obj: Any) -> None:
    atomic_write_text(path, json.dumps(_jsonable(obj), ensure_ascii=False, indent=2, sort_keys=True) + "\n")


# ----------------------------
# Formatting
# ----------------------------
def format_float(x: float) -> str:
    """17 significant digits, so every double round-trips exactly."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _cell(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format_float(v)
    if v is None:
        return ""
    return str(v)


def render_csv(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        # JSON has no inf/nan; keep them readable and round-trippable as strings
        return x if math.isfinite(x) else format_float(x)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_table(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]], fmt: str = "csv") -> None:
    """Write rows as CSV (one-line header) or as a JSON list of records."""
    rows = list(rows)
    if fmt == "json":
        atomic_write_json(path, [dict(zip(header, r)) for r in rows])
    else:
        atomic_write_text(path, render_csv(header, rows))
    logging.info("[Utils] Wrote %d rows to %s", len(rows), path)


def sidecar_path(path: Path, suffix: str) -> Path:
    path = Path(path)
    return path.with_name(path.stem + suffix)


def write_config_sidecar(path: Path, config: dict) -> Path:
    side = sidecar_path(path, ".config.json")
    atomic_write_json(side, config)
    return side
