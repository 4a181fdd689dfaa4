"""
Error types raised across XFT Lab.
"""


class XFTError(Exception):
    """Base class for every error raised by the lab."""


class DimensionError(XFTError, ValueError):
    """Operator or subsystem dimensions do not fit together."""


class NumericalError(XFTError, ArithmeticError):
    """A numerical routine failed or produced an out-of-tolerance result."""


class RangeError(XFTError, ArithmeticError):
    """A computation would overflow the floating-point range."""


class UndefinedError(XFTError, ArithmeticError):
    """A quantity is undefined, e.g. a log-ratio with a vanishing denominator."""


class IncompatibleSpectraError(XFTError, ValueError):
    """Two Gibbs distributions cannot be paired into a thermofield state."""


class MarginalError(XFTError, ValueError):
    """A joint state does not have the required thermal marginals."""


class InvalidSymmetryError(XFTError, ValueError):
    """A permutation cannot define a time-reversal operator."""


class GenerationError(XFTError, RuntimeError):
    """Random interaction generation did not meet its acceptance criterion."""


class NonUnitaryError(XFTError, ValueError):
    """An evolution operator is not unitary within tolerance."""


class NotProductStateError(XFTError, ValueError):
    """A check that requires a product of Gibbs states got a correlated state."""


class MismatchedRunsError(XFTError, ValueError):
    """Two runs differ in more than the swept parameter."""


class ParseError(XFTError, ValueError):
    """A configuration file is malformed or has unknown keys."""

    def __init__(self, message: str, key: str = None, line: int = None):
        self.key = key
        self.line = line
        where = []
        if key is not None:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class ConfigValidationError(XFTError, ValueError):
    """A configuration value fails validation."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class StageError(XFTError):
    """Wraps an error with the pipeline stage it happened in."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")


class InvalidMeasurementError(XFTError):
    """Measurement effects are not positive or do not sum to the identity."""
    # not a ValueError: pydantic would fold it into a ValidationError
