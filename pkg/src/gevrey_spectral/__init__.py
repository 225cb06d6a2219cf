"""Spectral toolkit for Gevrey regularity of invariant operators on T^n x T^m."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    DimensionError,
    GevreySpectralError,
    IncompatibleDataError,
    InsufficientDataError,
    OrderError,
    ParameterError,
    PreconditionError,
    TruncationError,
)
from .spectral_core import EigenIndex, GridSpec, ModeCoeffs  # noqa: E402
from .verdict import Status, Verdict  # noqa: E402

__all__ = [
    "DimensionError", "EigenIndex", "GevreySpectralError", "GridSpec", "IncompatibleDataError",
    "InsufficientDataError", "ModeCoeffs", "OrderError", "ParameterError", "PreconditionError",
    "Status", "TruncationError", "Verdict", "__version__",
]
