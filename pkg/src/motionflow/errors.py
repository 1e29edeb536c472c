"""Typed exceptions shared across the package.

Errors are raised eagerly at call boundaries (shape, dtype, domain
violations); there are no result wrappers.
"""


class MotionFlowError(Exception):
    """Base class for package errors."""


class ConfigError(MotionFlowError):
    """Invalid configuration: unknown key, bad value, broken invariant."""


class DataFormatError(MotionFlowError):
    """Corrupt or mismatched binary artifact (dataset, checkpoint, samples)."""


class SolverError(MotionFlowError):
    """Numerical failure inside an ODE solve (non-finite state or field)."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class VerificationError(MotionFlowError):
    """An analytic verification suite did not pass."""
