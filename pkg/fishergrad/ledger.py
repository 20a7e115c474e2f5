# fishergrad/ledger.py
from __future__ import annotations

import json
import logging
import pathlib
from datetime import datetime
from typing import Optional

import pytz

import fishergrad.db as db
from fishergrad.config import load_settings


def _now_iso(tz_name: str) -> str:
    try:
        tz = pytz.timezone(tz_name)
    except pytz.UnknownTimeZoneError:
        logging.warning("[Ledger] Unknown timezone %r, using UTC.", tz_name)
        tz = pytz.utc
    return datetime.now(tz).isoformat()


def record_run(
    subcommand: str,
    seed: Optional[int],
    config: dict,
    output_path: Optional[str],
    exit_code: int,
    path: Optional[pathlib.Path] = None,
) -> bool:
    """
    Append-only run record. Never raises: a broken ledger must not change
    the outcome of the run it describes.
    """
    try:
        ts = _now_iso(load_settings().tz_name)
        with db.connect(path) as conn:
            conn.execute(
                """
                INSERT INTO runs
                (timestamp, subcommand, seed, config_json, output_path, exit_code)
                VALUES (?, ?, ?, ?, ?, ?)
                """,
                (ts, subcommand, seed, json.dumps(config, sort_keys=True, default=str), output_path, exit_code),
            )
        return True
    except Exception as e:
        logging.exception("[Ledger] Failed to record %s run: %s", subcommand, e)
        return False


def recent_runs(limit: int = 20, path: Optional[pathlib.Path] = None) -> list[dict]:
    with db.connect(path) as conn:
        rows = conn.execute(
            "SELECT * FROM runs ORDER BY id DESC LIMIT ?", (limit,)
        ).fetchall()
    return [dict(r) for r in rows]
