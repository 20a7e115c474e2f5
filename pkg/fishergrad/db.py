# fishergrad/db.py
from __future__ import annotations

import pathlib
import sqlite3
from typing import Optional

from fishergrad.config import load_settings

# ---------------------------------------------------------------------
# Database path (resolved per call so FGRAD_DB changes take effect)
# ---------------------------------------------------------------------
def db_path() -> pathlib.Path:
    return load_settings().db_path


# ---------------------------------------------------------------------
# Connection helper (SINGLE source of truth)
# ---------------------------------------------------------------------
def connect(path: Optional[pathlib.Path] = None) -> sqlite3.Connection:
    path = pathlib.Path(path or db_path())
    path.parent.mkdir(parents=True, exist_ok=True)
    conn = sqlite3.connect(str(path))
    conn.row_factory = sqlite3.Row
    return conn


# ---------------------------------------------------------------------
# Init DB schema (idempotent)
# ---------------------------------------------------------------------
def init_db(path: Optional[pathlib.Path] = None) -> None:
    with connect(path) as db:
        db.executescript("""
        PRAGMA journal_mode=WAL;

        -- One row per CLI invocation (append-only)
        CREATE TABLE IF NOT EXISTS runs (
          id          INTEGER PRIMARY KEY AUTOINCREMENT,
          timestamp   TEXT NOT NULL,
          subcommand  TEXT NOT NULL,
          seed        INTEGER,
          config_json TEXT NOT NULL,
          output_path TEXT,
          exit_code   INTEGER NOT NULL
        );

        CREATE INDEX IF NOT EXISTS idx_runs_subcommand
        ON runs(subcommand, timestamp);
        """)
