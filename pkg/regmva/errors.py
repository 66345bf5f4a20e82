"""
Exception hierarchy for regmva.

Every error raised on purpose by the package derives from MvaError, which is a
ValueError so callers that only guard against bad input keep working.
"""


class MvaError(ValueError):
    """Base class for all regmva errors."""


class DatasetError(MvaError):
    """CSV could not be read or does not match its schema."""


class ShapeError(MvaError):
    """Matrix shapes are incompatible."""


class SingularMatrixError(MvaError):
    """A required inverse does not exist at the requested jitter."""


class NotOrthogonalError(MvaError):
    """A matrix expected to have orthonormal columns does not."""


class RotationMismatchError(MvaError):
    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


class DivergenceError(MvaError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class ConfigError(MvaError):
    """Invalid experiment configuration (CLI exit code 2)."""


class NumericalError(MvaError):
    """Non-finite or indefinite input reached a decomposition."""
