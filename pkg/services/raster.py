"""
RasterImage - 2-D scalar grid with pixel size and plane tag
"""

from dataclasses import dataclass, field, replace
from typing import Tuple

import numpy as np

from services.errors import ValidationError

# ============================================================================
# TAGS
# ============================================================================

PLANE_IMAGE = "image"
PLANE_DIFFRACTION = "diffraction"
PLANE_FREQUENCY = "frequency"
PLANES = (PLANE_IMAGE, PLANE_DIFFRACTION, PLANE_FREQUENCY)

KIND_INTENSITY = "intensity"
KIND_PHASE = "phase"
KIND_CTF = "ctf"
KINDS = (KIND_INTENSITY, KIND_PHASE, KIND_CTF)


@dataclass(frozen=True)
class RasterImage:
    """
    Real-valued image on a square-pixel grid

    For plane == "frequency" the pixel size is the frequency step (1/m) and
    the DC term sits at index (height // 2, width // 2).
    """

    values: np.ndarray
    pixel_size: float
    plane: str = PLANE_IMAGE
    kind: str = KIND_INTENSITY
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise ValidationError(f"raster must be 2-D, got shape {values.shape}")
        if np.iscomplexobj(values):
            raise ValidationError("raster values must be real")
        if not np.isfinite(self.pixel_size) or self.pixel_size <= 0:
            raise ValidationError(f"pixel_size must be > 0, got {self.pixel_size}")
        if self.plane not in PLANES:
            raise ValidationError(f"unknown plane tag {self.plane!r}")
        if self.kind not in KINDS:
            raise ValidationError(f"unknown value kind {self.kind!r}")
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def with_values(self, values: np.ndarray, **changes) -> "RasterImage":
        return replace(self, values=values, **changes)

    def coordinates(self) -> Tuple[np.ndarray, np.ndarray]:
        """Centered (x, y) coordinates in the raster's own units, indexing='xy'"""
        x = (np.arange(self.width) - self.width // 2) * self.pixel_size
        y = (np.arange(self.height) - self.height // 2) * self.pixel_size
        return np.meshgrid(x, y)
