"""Exception hierarchy shared by every module of the package."""


class GevreySpectralError(Exception):
    """Base class for all errors raised by gevrey_spectral."""


class DimensionError(GevreySpectralError, ValueError):
    """Array shape or grid layout does not match the expected dimensions."""


class ParameterError(GevreySpectralError, ValueError):
    """A numerical parameter lies outside its admissible range."""


class InsufficientDataError(GevreySpectralError, ValueError):
    """Too few nonzero data points to perform a fit."""


class PreconditionError(GevreySpectralError, ValueError):
    """An operation was called on inputs violating its precondition."""


class OrderError(GevreySpectralError, ValueError):
    """Operator construction violates the order bookkeeping of the canonical form."""


class TruncationError(GevreySpectralError, ArithmeticError):
    """Convolution overflow beyond the retained cutoff exceeded the allowed mass."""

    def __init__(self, message, dropped_norm=None):
        super().__init__(message)
        self.dropped_norm = dropped_norm


class IncompatibleDataError(GevreySpectralError, ValueError):
    """Right-hand side violates the compatibility condition on kernel modes."""

    def __init__(self, message, modes=()):
        super().__init__(message)
        self.modes = list(modes)
