"""
Exception hierarchy shared by every service
"""

from typing import Any, Dict, Optional


class LppError(Exception):
    """Base class for toolkit errors"""


class ValidationError(LppError, ValueError):
    """Input violates a documented precondition (CLI exit code 2)"""


class SaturationError(ValidationError):
    """Detected counts lie outside the range of the coincidence-loss model"""


class SamplingError(ValidationError):
    """Grid too coarse for the requested computation"""

    def __init__(self, message: str, required: Optional[int] = None):
        super().__init__(message)
        self.required = required


class EstimationError(LppError, RuntimeError):
    """An estimator could not produce a result (CLI exit code 1)"""


class FitError(EstimationError):
    """A fit did not converge to an admissible solution"""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class RasterIOError(LppError, OSError):
    """Malformed or unsupported raster file"""

    def __init__(self, message: str, offset: Optional[int] = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset
