# fishergrad/config.py
"""
Environment-driven defaults.

Every tunable reads FGRAD_<NAME> from the process environment (populated from
the project .env by main()). A malformed value is logged and the default is
used instead; command-line flags always win over anything read here.
"""

from __future__ import annotations

import logging
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Optional, TypeVar

import pytz

PREFIX = "FGRAD_"

T = TypeVar("T")


def _env_raw(name: str) -> Optional[str]:
    v = os.getenv(PREFIX + name)
    if v is None:
        return None
    v = v.strip()
    # tolerate accidental quoting in .env files
    if len(v) >= 2 and v[0] == v[-1] and v[0] in ("'", '"'):
        v = v[1:-1].strip()
    return v or None


def _env_parsed(name: str, default: T, parse: Callable[[str], T]) -> T:
    raw = _env_raw(name)
    if raw is None:
        return default
    try:
        return parse(raw)
    except Exception:
        logging.warning("[Config] Invalid value in %s%s: %r. Using default %r.", PREFIX, name, raw, default)
        return default


def env_int(name: str, default: int) -> int:
    return _env_parsed(name, default, int)


def env_float(name: str, default: float) -> float:
    return _env_parsed(name, default, float)


def env_str(name: str, default: str) -> str:
    return _env_parsed(name, default, str)


def _parse_tz(raw: str) -> str:
    pytz.timezone(raw)
    return raw


@dataclass(frozen=True)
class Settings:
    seed: int
    out_dir: Path
    db_path: Path
    tz_name: str
    ks_samples: int
    threshold: float
    log_level: str

    def as_dict(self) -> dict:
        d = asdict(self)
        d["out_dir"] = str(self.out_dir)
        d["db_path"] = str(self.db_path)
        return d


def load_settings() -> Settings:
    """Resolve settings from the environment at call time (not import time)."""
    out_dir = Path(env_str("OUT_DIR", "runs"))
    db_path = Path(env_str("DB", str(out_dir / "fishergrad.db")))
    return Settings(
        seed=env_int("SEED", 0),
        out_dir=out_dir,
        db_path=db_path,
        tz_name=_env_parsed("TZ", "UTC", _parse_tz),
        ks_samples=env_int("KS_SAMPLES", 20000),
        threshold=env_float("THRESHOLD", 0.05),
        log_level=env_str("LOG_LEVEL", "INFO").upper(),
    )
