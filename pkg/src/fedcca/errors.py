"""Exception types raised across the package."""

from __future__ import annotations


class InvalidInputError(ValueError):
    """An argument violates an operation's preconditions (shape, sign, length)."""


class InfeasiblePartitionError(ValueError):
    """A partition scheme cannot be realized for the given pool and client count."""


class ConfigError(ValueError):
    """An experiment configuration is malformed or internally inconsistent."""
