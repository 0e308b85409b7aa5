"""
Ronchigram fitting - recover eta0, NA and coincidence loss from a micrograph
of the standing wave
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np
import pandas as pd
import scipy.fft
from scipy import ndimage, optimize, signal

import config
from services.detector import CoincidenceParams, apply_coincidence_loss, remove_dead_pixels
from services.errors import EstimationError, FitError, SaturationError, ValidationError
from services.physics import ElectronBeam, LaserMode, MAX_NUMERICAL_APERTURE
from services.raster import RasterImage
from services.wave_propagation import (
    GridSpec,
    RonchigramSetup,
    lower_bound_delta,
    predicted_detector_wavevector,
    synthesize_ronchigram,
)

logger = logging.getLogger(__name__)

# peak power / median power of the windowed spectrum
PEAK_SIGNIFICANCE = 50.0
MIN_FRINGE_PERIODS = 8
# coarse search ignores this many (unpadded) bins around DC
DC_EXCLUSION_BINS = 4

PEAK_PHASE_BOUNDS = (0.0, 3.0)
NA_BOUNDS = (0.002, MAX_NUMERICAL_APERTURE)
# theta times the detected background
SATURATION_BOUNDS = (0.0, 0.95)

# ============================================================================
# TYPES
# ============================================================================

@dataclass(frozen=True)
class RonchigramHints:
    """
    What is known about the exposure before fitting

    delta defaults to the lower-bound convention -(pi/4) k / k_L^2. The
    magnification is only needed when the fringe wavevector cannot be
    measured from the image (e.g. eta0 = 0).
    """

    beam: ElectronBeam
    laser_wavelength: float
    focal_length: float
    magnification: Optional[float] = None
    delta: Optional[float] = None
    wavevector: Optional[Tuple[float, float]] = None
    peak_phase: float = 0.5
    numerical_aperture: float = config.DEFAULT_NA
    theta: float = 0.0
    center: Optional[Tuple[float, float]] = None   # detector meters
    outer_repetitions: int = config.RONCHIGRAM_OUTER_REPETITIONS

    def __post_init__(self):
        if self.laser_wavelength <= 0 or self.focal_length <= 0:
            raise ValidationError("laser wavelength and focal length must be > 0")
        if self.magnification is not None and self.magnification <= 0:
            raise ValidationError(f"magnification must be > 0, got {self.magnification}")
        if self.delta is not None and (not np.isfinite(self.delta) or self.delta == 0):
            raise ValidationError(f"delta must be finite and non-zero, got {self.delta}")
        if not NA_BOUNDS[0] <= self.numerical_aperture <= NA_BOUNDS[1]:
            raise ValidationError(f"initial NA {self.numerical_aperture} outside {NA_BOUNDS}")
        if not PEAK_PHASE_BOUNDS[0] <= self.peak_phase <= PEAK_PHASE_BOUNDS[1]:
            raise ValidationError(f"initial eta0 {self.peak_phase} outside {PEAK_PHASE_BOUNDS}")
        if self.theta < 0:
            raise ValidationError(f"initial theta must be >= 0, got {self.theta}")
        if self.outer_repetitions < 1:
            raise ValidationError("outer_repetitions must be >= 1")


@dataclass(frozen=True)
class RonchigramFit:
    wavevector: Tuple[float, float]          # cycles/m on the detector
    center: Tuple[float, float]              # (column, row) pixels
    peak_phase: float                        # rad
    numerical_aperture: float
    theta_cl: float
    residual_norm: float
    dose: float = 0.0                        # counts/pixel before coincidence loss
    background: float = 0.0                  # detected counts used for normalization
    delta: float = 0.0
    rotation: float = 0.0
    magnification: float = 0.0               # effective, from the measured fringe period
    detector_scale: float = 0.0              # detector distance per phase-plate distance
    objective_history: Tuple[float, ...] = ()
    dead_pixels: int = 0
    model: Optional[RasterImage] = field(default=None, repr=False, compare=False)

    @property
    def fringe_period(self) -> float:
        """Detector-plane fringe period (m)"""
        return 1.0 / math.hypot(*self.wavevector)


# ============================================================================
# FREQUENCY ESTIMATION
# ============================================================================

def refine_frequency_peak(power: Callable[[np.ndarray], float], start, step: float,
                          xatol: float = 1e-4) -> np.ndarray:
    """
    Local continuous maximization of a spectral power around a coarse peak

    Args:
        power: Objective over frequency (1-D or 2-D array)
        start: Coarse peak frequency
        step: Coarse grid spacing; the search stays within one step in 1-D
        xatol: Convergence tolerance in units of step

    Returns:
        Refined frequency, same shape as start
    """

    start = np.atleast_1d(np.asarray(start, dtype=float))

    if start.size == 1:
        result = optimize.minimize_scalar(
            lambda z: -power(start + z * step),
            bounds=(-1.0, 1.0),
            method="bounded",
            options={"xatol": xatol},
        )
        return start + result.x * step

    simplex = np.vstack([np.zeros(start.size), 0.5 * np.eye(start.size)])
    result = optimize.minimize(
        lambda z: -power(start + z * step),
        np.zeros(start.size),
        method="Nelder-Mead",
        options={"xatol": xatol, "fatol": 1e-12, "initial_simplex": simplex, "maxiter": 2000},
    )
    return start + result.x * step


def _fourier_magnitude(values: np.ndarray, x: np.ndarray, y: np.ndarray, q: np.ndarray) -> float:
    """|sum values(x, y) exp(-2 pi i q.r)| on a separable grid"""
    ex = np.exp(-2j * math.pi * q[0] * x)
    ey = np.exp(-2j * math.pi * q[1] * y)
    return float(abs(ey @ values @ ex))


def estimate_standing_wave_vector(image: RasterImage) -> Tuple[float, float]:
    """
    Fringe wavevector maximizing the magnitude of the image's continuous
    Fourier integral

    A Hann-windowed, 2x zero-padded DFT locates the coarse peak away from
    DC; the continuous transform is then maximized around it. The
    half-plane representative (q_x > 0, or q_x = 0 and q_y > 0) is returned.
    """

    values = np.asarray(image.values, dtype=float)
    if np.ptp(values) == 0:
        raise EstimationError("constant image has no fringes")
    height, width = values.shape
    centered = values - values.mean()
    window = np.outer(signal.windows.hann(height, sym=False), signal.windows.hann(width, sym=False))
    weighted = centered * window

    padded_shape = (2 * height, 2 * width)
    power = np.abs(scipy.fft.fft2(weighted, s=padded_shape, workers=config.fft_workers())) ** 2
    power = scipy.fft.fftshift(power)

    ky = np.arange(padded_shape[0]) - padded_shape[0] // 2
    kx = np.arange(padded_shape[1]) - padded_shape[1] // 2
    KX, KY = np.meshgrid(kx, ky)
    upper = (KX > 0) | ((KX == 0) & (KY > 0))
    far = np.hypot(KX / 2.0, KY / 2.0) > DC_EXCLUSION_BINS
    candidates = np.where(upper & far, power, 0.0)

    reference = float(np.median(power[upper & far]))
    peak = float(candidates.max())
    if peak <= 0:
        raise EstimationError("image has no spectral content; no fringe wavevector")
    if reference > 0 and peak / reference < PEAK_SIGNIFICANCE:
        raise EstimationError(
            f"no significant fringe peak (peak/median power {peak / reference:.1f} "
            f"< {PEAK_SIGNIFICANCE:g})"
        )

    row, col = np.unravel_index(np.argmax(candidates), candidates.shape)
    pixel = image.pixel_size
    coarse = np.array([kx[col] / (padded_shape[1] * pixel), ky[row] / (padded_shape[0] * pixel)])
    step = 1.0 / (padded_shape[1] * pixel)

    x = (np.arange(width) - width // 2) * pixel
    y = (np.arange(height) - height // 2) * pixel
    refined = refine_frequency_peak(lambda q: _fourier_magnitude(weighted, x, y, q), coarse, step)

    qx, qy = float(refined[0]), float(refined[1])
    if qx < 0 or (qx == 0 and qy < 0):
        qx, qy = -qx, -qy

    cycles = math.hypot(qx, qy) * min(width, height) * pixel
    if cycles < MIN_FRINGE_PERIODS:
        raise EstimationError(
            f"only {cycles:.1f} fringe periods across the image (need >= {MIN_FRINGE_PERIODS})"
        )

    logger.debug(f"Fringe wavevector ({qx:.6g}, {qy:.6g}) 1/m, {cycles:.1f} periods")
    return qx, qy


# ============================================================================
# MODEL
# ============================================================================

class _RonchigramModel:
    """Forward model with the last synthesized intensity cached"""

    def __init__(self, hints: RonchigramHints, grid: GridSpec, delta: float,
                 magnification: float, rotation: float, tilt: float = 0.0):
        self.hints = hints
        self.grid = grid
        self.delta = delta
        self.magnification = magnification
        self.rotation = rotation
        self.tilt = tilt
        self._key = None
        self._intensity = None

    def intensity(self, center: Tuple[float, float], peak_phase: float, na: float) -> np.ndarray:
        key = (center[0], center[1], peak_phase, na)
        if key != self._key:
            mode = LaserMode(self.hints.laser_wavelength, na, self.tilt, peak_phase)
            setup = RonchigramSetup(
                beam=self.hints.beam,
                mode=mode,
                delta=self.delta,
                focal_length=self.hints.focal_length,
                magnification=self.magnification,
                rotation=self.rotation,
                laser_center=center,
            )
            self._intensity = synthesize_ronchigram(setup, self.grid).values
            self._key = key
        return self._intensity


class _Objective:
    """Mean squared residual of the background-normalized image"""

    def __init__(self, model: _RonchigramModel, data: np.ndarray, valid: np.ndarray, background: float):
        self.model = model
        self.data = data[valid] / background
        self.valid = valid
        self.background = background
        self.dose = background

    def detected(self, intensity: np.ndarray, dose: float, theta: float) -> np.ndarray:
        return apply_coincidence_loss(dose * intensity, CoincidenceParams(theta)) / self.background

    def __call__(self, center, peak_phase: float, na: float, saturation: float) -> float:
        theta = saturation / self.background
        # dose that reproduces the background under this theta
        start = -math.log1p(-saturation) / theta if theta > 0 else self.background
        intensity = self.model.intensity(center, peak_phase, na)[self.valid]

        def misfit(dose):
            residual = self.detected(intensity, dose, theta) - self.data
            return float(np.mean(residual * residual))

        result = optimize.minimize_scalar(
            misfit,
            bounds=(0.5 * start, 2.0 * start),
            method="bounded",
            options={"xatol": 1e-6 * start},
        )
        self.dose = float(result.x)
        return float(result.fun)


# ============================================================================
# FIT
# ============================================================================

def _initial_center(objective: _Objective, shape: Tuple[int, int], pixel: float,
                    peak_phase: float, na: float) -> Tuple[float, float]:
    """Laser center from the cross-correlation peak between data and a centered model"""

    reference = objective.model.intensity((0.0, 0.0), peak_phase, na)
    if np.ptp(reference) == 0:
        return 0.0, 0.0

    data = np.zeros(shape)
    data[objective.valid] = objective.data
    data[~objective.valid] = np.mean(objective.data)

    workers = config.fft_workers()
    spectrum = scipy.fft.fft2(data - data.mean(), workers=workers)
    spectrum *= np.conj(scipy.fft.fft2(reference - reference.mean(), workers=workers))
    correlation = scipy.fft.ifft2(spectrum, workers=workers).real

    row, col = np.unravel_index(np.argmax(correlation), correlation.shape)
    shift_row = row - shape[0] if row >= shape[0] // 2 else row
    shift_col = col - shape[1] if col >= shape[1] // 2 else col
    return shift_col * pixel, shift_row * pixel


def _scaled_na(z: float) -> float:
    return min(max(float(z) * config.DEFAULT_NA, NA_BOUNDS[0]), NA_BOUNDS[1])


def _line_search(objective: Callable[[float], float], current: float, half_range: float,
                 current_value: float) -> Tuple[float, float]:
    """Bounded golden-section search; keeps the current point unless improved"""
    result = optimize.minimize_scalar(
        objective,
        bounds=(current - half_range, current + half_range),
        method="bounded",
        options={"xatol": 1e-3 * half_range},
    )
    if result.fun < current_value:
        return float(result.x), float(result.fun)
    return current, current_value


def fit_ronchigram(image: RasterImage, hints: RonchigramHints,
                   dead_pixel_mask: Optional[np.ndarray] = None) -> RonchigramFit:
    """
    Fit the standing-wave Ronchigram model to a counting-mode micrograph

    Procedure:
        1. Dead pixels are flagged (or taken from dead_pixel_mask) and the
           image is normalized by its median background.
        2. The fringe wavevector is estimated; it fixes the plate scale and
           the laser-axis rotation.
        3. A model image is generated for the initial (eta0, NA, theta).
        4. The laser center is initialized from the cross-correlation peak.
        5. Golden-section searches within one fringe period refine the center,
           along the laser axis and then across it.
        6. A bounded simplex minimizes over (eta0, NA, theta).
        Steps 5 and 6 are repeated hints.outer_repetitions times.

    The phase plate is modelled with zero tilt (lower-bound convention).

    Raises:
        EstimationError: wavevector unavailable and no magnification hint
        FitError: final parameters violate their invariants
    """

    # 1. dead pixels and background
    if dead_pixel_mask is None:
        cleaned, mask = remove_dead_pixels(image)
    else:
        mask = np.asarray(dead_pixel_mask, dtype=bool)
        if mask.shape != image.shape:
            raise ValidationError(f"dead-pixel mask shape {mask.shape} != image shape {image.shape}")
        cleaned = image
    valid = ~mask
    data = np.asarray(cleaned.values, dtype=float)
    background = float(np.median(data[valid]))
    if not np.isfinite(background) or background <= 0:
        raise ValidationError(f"image background must be > 0, got {background}")

    delta = hints.delta if hints.delta is not None else lower_bound_delta(hints.beam, hints.laser_wavelength)

    # 2. wavevector and plate scale
    try:
        wavevector = estimate_standing_wave_vector(cleaned.with_values(np.where(valid, data, background)))
    except EstimationError as exc:
        if hints.wavevector is not None:
            wavevector = tuple(hints.wavevector)
        elif hints.magnification is not None:
            mode = LaserMode(hints.laser_wavelength, hints.numerical_aperture)
            setup = RonchigramSetup(hints.beam, mode, delta, hints.focal_length, hints.magnification)
            wavevector = predicted_detector_wavevector(setup)
        else:
            raise EstimationError(f"{exc}; supply a wavevector or magnification hint") from exc
        logger.warning(f"Fringe wavevector not measurable ({exc}); using {wavevector}")

    q = math.hypot(*wavevector)
    rotation = math.atan2(wavevector[1], wavevector[0])
    detector_scale = 2.0 / (hints.laser_wavelength * q)
    magnification = detector_scale * abs(delta) / hints.focal_length
    period = 1.0 / q

    grid = GridSpec(image.width, image.height, image.pixel_size)
    model = _RonchigramModel(hints, grid, delta, magnification, rotation)
    objective = _Objective(model, data, valid, background)

    # 3-4. model and center initialization
    peak_phase, na = hints.peak_phase, hints.numerical_aperture
    saturation = min(hints.theta * background, SATURATION_BOUNDS[1])
    if hints.center is not None:
        center = tuple(hints.center)
    else:
        center = _initial_center(objective, image.shape, image.pixel_size, peak_phase, na)
    current = objective(center, peak_phase, na, saturation)
    logger.info(f"Ronchigram fit start: center {center}, objective {current:.6g}")

    along = np.array([math.cos(rotation), math.sin(rotation)])
    across = np.array([-math.sin(rotation), math.cos(rotation)])
    history = []

    for repetition in range(hints.outer_repetitions):
        # 5. coordinate searches, longitudinal then transverse
        for direction in (along, across):
            origin = np.array(center)

            def along_line(t, origin=origin, direction=direction):
                point = origin + t * direction
                return objective((float(point[0]), float(point[1])), peak_phase, na, saturation)

            step, current = _line_search(along_line, 0.0, period, current)
            point = origin + step * direction
            center = (float(point[0]), float(point[1]))

        # 6. joint (eta0, NA, theta) in normalized units
        def joint(z):
            return objective(center, float(z[0]), _scaled_na(z[1]), float(z[2]))

        start = np.array([peak_phase, na / config.DEFAULT_NA, saturation])
        bounds = [
            PEAK_PHASE_BOUNDS,
            (NA_BOUNDS[0] / config.DEFAULT_NA, NA_BOUNDS[1] / config.DEFAULT_NA),
            SATURATION_BOUNDS,
        ]
        simplex = [start]
        for axis in range(3):
            vertex = start.copy()
            vertex[axis] += 0.1 if vertex[axis] + 0.1 <= bounds[axis][1] else -0.1
            simplex.append(vertex)

        result = optimize.minimize(
            joint,
            start,
            method="Nelder-Mead",
            bounds=bounds,
            options={
                "initial_simplex": np.array(simplex),
                "xatol": 1e-4,
                "fatol": config.RONCHIGRAM_SIMPLEX_TOL * max(current, 1e-12),
                "maxiter": 600,
            },
        )
        if result.fun < current:
            peak_phase = float(result.x[0])
            na = _scaled_na(result.x[1])
            saturation = float(result.x[2])
            current = float(result.fun)

        history.append(current)
        logger.info(
            f"Repetition {repetition + 1}/{hints.outer_repetitions}: objective {current:.6g}, "
            f"eta0 {math.degrees(peak_phase):.2f} deg, NA {na:.5f}, theta*B {saturation:.4f}"
        )

    # final dose for the reported state
    current = objective(center, peak_phase, na, saturation)
    theta = saturation / background
    residual_norm = math.sqrt(current)

    diagnostics = {
        "peak_phase": peak_phase,
        "numerical_aperture": na,
        "theta": theta,
        "objective_history": history,
    }
    if not (np.isfinite(residual_norm) and peak_phase >= 0 and 0 < na <= MAX_NUMERICAL_APERTURE):
        raise FitError("Ronchigram fit ended outside the admissible parameter range", diagnostics)

    intensity = model.intensity(center, peak_phase, na)
    try:
        detected = apply_coincidence_loss(objective.dose * intensity, CoincidenceParams(theta))
    except SaturationError as exc:
        raise FitError(str(exc), diagnostics) from exc

    center_pixels = (center[0] / image.pixel_size + image.width // 2,
                     center[1] / image.pixel_size + image.height // 2)

    return RonchigramFit(
        wavevector=(float(wavevector[0]), float(wavevector[1])),
        center=center_pixels,
        peak_phase=peak_phase,
        numerical_aperture=na,
        theta_cl=theta,
        residual_norm=residual_norm,
        dose=objective.dose,
        background=background,
        delta=delta,
        rotation=rotation,
        magnification=magnification,
        detector_scale=detector_scale,
        objective_history=tuple(history),
        dead_pixels=int(mask.sum()),
        model=image.with_values(detected, metadata={"delta": delta}),
    )


# ============================================================================
# CREST / TROUGH PROFILES
# ============================================================================

def crest_trough_profiles(image: RasterImage, fit: RonchigramFit, count: int = 16,
                          samples: int = 256) -> pd.DataFrame:
    """
    Averaged profiles across the laser axis along `count` adjacent fringe
    crests and `count - 1` troughs nearest the fitted center

    Positions are reported on the phase plate (x_um). Crests are the lines
    of maximal model intensity.
    """

    if count < 2:
        raise ValidationError(f"need at least 2 crests, got {count}")
    if fit.model is None or fit.detector_scale <= 0:
        raise ValidationError("fit carries no model image")

    pixel = image.pixel_size
    period = fit.fringe_period
    along = np.array([math.cos(fit.rotation), math.sin(fit.rotation)])
    across = np.array([-math.sin(fit.rotation), math.cos(fit.rotation)])
    center = np.array([(fit.center[0] - image.width // 2) * pixel,
                       (fit.center[1] - image.height // 2) * pixel])

    reach = 0.5 * min(image.width, image.height) * pixel
    half_span = (0.5 * count + 1.0) * period
    if half_span >= reach:
        raise ValidationError(f"{count} crests do not fit inside the image")
    offsets = np.linspace(-(reach - half_span), reach - half_span, samples)

    def lines(phase: float, n: int) -> np.ndarray:
        return (phase + np.arange(n) - n // 2) * period

    def line_average(values: np.ndarray, positions: np.ndarray) -> np.ndarray:
        points = (center[:, None, None]
                  + positions[None, :, None] * along[:, None, None]
                  + offsets[None, None, :] * across[:, None, None])
        cols = points[0] / pixel + image.width // 2
        rows = points[1] / pixel + image.height // 2
        sampled = ndimage.map_coordinates(values, [rows.ravel(), cols.ravel()],
                                          order=1, mode="constant", cval=np.nan)
        return np.nanmean(sampled.reshape(len(positions), samples), axis=0)

    model = np.asarray(fit.model.values, dtype=float)
    crest_phase, trough_phase = 0.0, 0.5
    if np.nanmean(line_average(model, lines(0.0, count))) < np.nanmean(line_average(model, lines(0.5, count))):
        crest_phase, trough_phase = 0.5, 0.0
    crests = lines(crest_phase, count)
    troughs = lines(trough_phase, count - 1)

    data = np.asarray(image.values, dtype=float)
    logger.info(f"Crest/trough profiles over {count} crests and {count - 1} troughs")

    return pd.DataFrame({
        "x_um": offsets / fit.detector_scale * 1e6,
        "crest_data": line_average(data, crests),
        "trough_data": line_average(data, troughs),
        "crest_model": line_average(model, crests),
        "trough_model": line_average(model, troughs),
    })
