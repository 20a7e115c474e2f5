# fishergrad/errors.py
"""
Exception hierarchy shared by the library and the CLI.

Every error carries the process exit code the CLI reports for it:
- PropertyFailure  -> 1 (an asserted property or statistical check failed)
- ConfigError      -> 2 (bad flags / environment, raised before any computation)
- DomainError      -> 2 (argument outside a function's domain)
- CapacityError    -> 3 (enumeration guard exceeded)
"""

from __future__ import annotations


class FishergradError(Exception):
    exit_code = 1


class DomainError(FishergradError, ValueError):
    exit_code = 2


class ConfigError(FishergradError, ValueError):
    exit_code = 2


class CapacityError(FishergradError):
    exit_code = 3


class PropertyFailure(FishergradError):
    exit_code = 1
