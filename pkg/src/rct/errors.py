"""Package-level error types; the CLI maps them to exit codes."""

from __future__ import annotations


class DataError(Exception):
    """Malformed or inconsistent input data (exit code 2)."""


class UsageError(Exception):
    """Bad flags, config keys or argument combinations (exit code 1)."""
