"""
Concord error types

Library modules raise these; only the CLI turns them into exit codes.
"""


class ConcordError(Exception):
    """Base class for every error raised by concord modules."""


class InvalidInputError(ConcordError, ValueError):
    """Input violates an operation's precondition (shape, simplex, finiteness)."""


class UndefinedPreferenceError(InvalidInputError):
    """Preference graph requested for fewer than two strategies."""


class DegenerateGraphError(ConcordError):
    """Game graph has no positive off-diagonal weight to rank on."""


class ConvergenceError(ConcordError):
    """Fixed-point iteration ran out of iterations."""

    def __init__(self, message, residual, iterations):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class SizeGuardError(ConcordError):
    """Exact enumeration requested beyond its size limit."""


class TrainingError(ConcordError):
    """Oracle ascent produced a non-finite gradient or parameter."""


class ConfigError(ConcordError):
    """Invalid configuration value. `key` names the offending flat key."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class SnapshotError(ConcordError):
    """Run-directory file is missing, truncated or malformed."""
