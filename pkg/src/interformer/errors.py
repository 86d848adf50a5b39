"""Exception types raised across the package."""


class InterformerError(Exception):
    """Base class for all errors raised by this package."""


class ShapeMismatch(InterformerError, ValueError):
    pass


class NonFiniteValue(InterformerError, ValueError):
    pass


class NonScalarOutput(InterformerError, ValueError):
    pass


class AxisOutOfRange(InterformerError, IndexError):
    pass


class EvenKernel(InterformerError, ValueError):
    pass


class OddDimension(InterformerError, ValueError):
    pass


class MaskLengthMismatch(InterformerError, ValueError):
    pass


class UninitializedStats(InterformerError, RuntimeError):
    pass


class InputTooShort(InterformerError, ValueError):
    pass


class ConfigError(InterformerError, ValueError):
    """Invalid configuration. ``key`` names the offending entry when known."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class ConfigMismatch(InterformerError, ValueError):
    pass


class DivergenceDetected(InterformerError, RuntimeError):
    """Training produced a non-finite loss or gradient norm.

    The partial run report is attached as ``report``.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
