"""
Electron-counting camera model: coincidence loss, dead pixels and shot noise
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import ndimage, stats

import config
from services.errors import SaturationError, ValidationError
from services.raster import RasterImage

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CoincidenceParams:
    """Theta = (tau/T)(A/a), the per-count coincidence cross-section"""

    theta: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.theta) or self.theta < 0:
            raise ValidationError(f"coincidence theta must be >= 0, got {self.theta}")


# ============================================================================
# COINCIDENCE LOSS
# ============================================================================

def apply_coincidence_loss(actual_counts, params: CoincidenceParams):
    """I_det = (1 - exp(-I_act Theta)) / Theta, identity when Theta = 0"""

    actual = np.asarray(actual_counts, dtype=float)
    if np.any(actual < 0):
        raise ValidationError("actual counts must be >= 0")
    if params.theta == 0:
        return actual.copy() if actual.ndim else float(actual)

    detected = -np.expm1(-actual * params.theta) / params.theta
    return detected if detected.ndim else float(detected)


def invert_coincidence_loss(detected_counts, params: CoincidenceParams):
    """I_act = -ln(1 - I_det Theta) / Theta; needs I_det Theta < 1"""

    detected = np.asarray(detected_counts, dtype=float)
    if np.any(detected < 0):
        raise ValidationError("detected counts must be >= 0")
    if params.theta == 0:
        return detected.copy() if detected.ndim else float(detected)

    product = detected * params.theta
    if np.any(product >= 1.0):
        worst = float(np.max(product))
        raise SaturationError(
            f"detected counts x theta reaches {worst:.6g} >= 1; "
            f"the coincidence-loss model has no preimage"
        )

    actual = -np.log1p(-product) / params.theta
    return actual if actual.ndim else float(actual)


# ============================================================================
# SHOT NOISE
# ============================================================================

def sample_poisson_counts(expected: RasterImage, seed: int) -> RasterImage:
    """
    Independent Poisson draws per pixel

    Each pixel consumes exactly one Philox uniform, taken at its flat index
    and mapped through the Poisson quantile function, so its count depends
    only on (seed, pixel index) and its own expectation.
    """

    values = np.asarray(expected.values, dtype=float)
    if np.any(values < 0) or not np.all(np.isfinite(values)):
        raise ValidationError("expected counts must be finite and >= 0")

    generator = np.random.Generator(np.random.Philox(seed))
    uniforms = np.maximum(generator.random(values.shape), np.finfo(float).tiny)

    counts = np.zeros_like(values)
    lit = values > 0
    counts[lit] = stats.poisson.ppf(uniforms[lit], values[lit])
    return expected.with_values(counts, kind="intensity")


def expose(intensity: RasterImage, dose: float, params: CoincidenceParams, seed: int) -> RasterImage:
    """Counting-mode micrograph of a normalized intensity at `dose` electrons/pixel"""
    if dose <= 0:
        raise ValidationError(f"dose must be > 0, got {dose}")
    expected = apply_coincidence_loss(dose * np.clip(intensity.values, 0.0, None), params)
    return sample_poisson_counts(intensity.with_values(expected), seed)


# ============================================================================
# DEAD PIXELS
# ============================================================================

def remove_dead_pixels(image: RasterImage) -> Tuple[RasterImage, np.ndarray]:
    """
    Replaces pixels further than DEAD_PIXEL_MAD median absolute deviations
    from the local median by that median

    The median (DEAD_PIXEL_WINDOW) and the MAD (DEAD_PIXEL_MAD_WINDOW) are
    both taken over local windows.

    Returns:
        (cleaned image, boolean mask of replaced pixels)
    """

    values = np.asarray(image.values, dtype=float)
    local = ndimage.median_filter(values, size=config.DEAD_PIXEL_WINDOW, mode="nearest")
    deviation = np.abs(values - local)
    mad = ndimage.median_filter(deviation, size=config.DEAD_PIXEL_MAD_WINDOW, mode="nearest")

    # flat neighbourhoods fall back to the image-wide scale
    fallback = float(np.median(deviation)) or float(np.mean(deviation)) or 1.0
    mad = np.where(mad > 0, mad, fallback)

    mask = deviation > config.DEAD_PIXEL_MAD * mad
    if np.any(mask):
        logger.info(f"Replacing {int(mask.sum())} dead/hot pixels")
    cleaned = np.where(mask, local, values)
    return image.with_values(cleaned), mask
