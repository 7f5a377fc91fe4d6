"""Exception hierarchy. Categories map onto CLI exit codes."""

from __future__ import annotations


class DacError(Exception):
    exit_code = 1


class ConfigError(DacError, ValueError):
    """Invalid hyperparameter, flag or modifier."""

    exit_code = 2


class DataError(DacError, ValueError):
    """Malformed, inconsistent or insufficient data."""

    exit_code = 3


class InsufficientSupportError(DataError):
    """Fewer tuples than neighbors requested for an action (or overall)."""


class NumericError(DacError, ArithmeticError):
    """Non-finite values produced during compilation or solving."""

    exit_code = 4
