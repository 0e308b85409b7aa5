"""
Thon-ring analysis - astigmatism correction, CTF zeros, defocus polynomial
and phase-scan reduction
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import ndimage, optimize, signal

import config
from services.ctf_engine import power_spectrum, rms_angular_average
from services.errors import EstimationError, FitError, ValidationError
from services.physics import ElectronBeam, LaserMode, peak_phase_from_power
from services.raster import PLANE_FREQUENCY, RasterImage
from services.ronchigram_fit import refine_frequency_peak

logger = logging.getLogger(__name__)

# scaled units for the polynomial fit: s in 1/nm
FREQUENCY_UNIT = 1e9
DEFAULT_SECTORS = 72
DEFAULT_RINGS = 4
MIN_SCAN_POSITIONS = 8
RMS_TO_PEAK_TO_PEAK = 2.0 ** 1.5
# estimated period may exceed the covered span by this fraction
SCAN_COVERAGE_SLACK = 0.05
# relative difference accepted between two degrees-per-watt slopes
SLOPE_AGREEMENT = 0.25

# ============================================================================
# TYPES
# ============================================================================

@dataclass(frozen=True)
class Ellipse:
    ratio: float = 1.0     # major / minor semi-axis, >= 1
    angle: float = 0.0     # major-axis direction, [0, pi)

    def __post_init__(self):
        if not self.ratio >= 1.0:
            raise ValidationError(f"ellipse ratio must be >= 1, got {self.ratio}")

    def shape(self, azimuth):
        """Radius of the unit-geometric-mean ellipse along `azimuth`"""
        delta = np.asarray(azimuth) - self.angle
        return 1.0 / np.sqrt(np.cos(delta) ** 2 / self.ratio + self.ratio * np.sin(delta) ** 2)


@dataclass(frozen=True)
class CtfFit:
    """
    zeta(s) = a s^4 + b s^2 + c through the CTF zeros (zeta = n pi)

    With zeta = eta(0) - gamma: b = pi DeltaZ lambda_e, a = -(pi/2) C_s lambda_e^3.
    """

    quartic_coeff: float                     # rad m^4
    quadratic_coeff: float                   # rad m^2
    constant_phase: float                    # rad
    ellipse: Ellipse = Ellipse()
    zero_locations: Tuple[float, ...] = ()   # 1/m
    zero_phases: Tuple[float, ...] = ()      # rad
    covariance: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)), repr=False, compare=False)
    wavelength: Optional[float] = None       # electron wavelength for derived quantities

    def __post_init__(self):
        zeros = np.asarray(self.zero_locations, dtype=float)
        if zeros.size > 1 and np.any(np.diff(zeros) <= 0):
            raise ValidationError("zero locations must be strictly increasing")

    @property
    def defocus(self) -> float:
        if not self.wavelength:
            raise ValidationError("defocus needs the electron wavelength")
        return self.quadratic_coeff / (math.pi * self.wavelength)

    @property
    def spherical_aberration(self) -> float:
        if not self.wavelength:
            raise ValidationError("C_s needs the electron wavelength")
        return -2.0 * self.quartic_coeff / (math.pi * self.wavelength ** 3)


@dataclass(frozen=True)
class PhaseScanResult:
    positions: np.ndarray     # m
    phases: np.ndarray        # rad
    peak_to_peak: float       # rad
    period: float             # m

    def __post_init__(self):
        if self.peak_to_peak < 0 or self.period <= 0:
            raise ValidationError("peak-to-peak must be >= 0 and period > 0")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "position_nm": self.positions * 1e9,
            "phase_deg": np.degrees(self.phases),
        })


@dataclass(frozen=True)
class PowerSlope:
    """Antinode phase per watt of input power, fitted through the origin"""

    slope: float                  # rad / W
    variance: float               # rad^2 / W^2; NaN for one unweighted point
    powers: np.ndarray = field(repr=False, compare=False)
    phases: np.ndarray = field(repr=False, compare=False)

    @property
    def deg_per_watt(self) -> float:
        return math.degrees(self.slope)

    @property
    def deg_per_watt_error(self) -> float:
        return math.degrees(math.sqrt(self.variance)) if np.isfinite(self.variance) else float("nan")


# ============================================================================
# ASTIGMATISM
# ============================================================================

def _sector_profiles(values: np.ndarray, sectors: int, last: int) -> np.ndarray:
    """Mean power per (sector, integer radius) bin; NaN where a bin is empty"""
    height, width = values.shape
    ix = np.arange(width) - width // 2
    iy = np.arange(height) - height // 2
    IX, IY = np.meshgrid(ix, iy)
    radius = np.rint(np.hypot(IX, IY)).astype(np.int64)
    azimuth = np.mod(np.arctan2(IY, IX), 2.0 * math.pi)
    sector = np.minimum((azimuth / (2.0 * math.pi / sectors)).astype(np.int64), sectors - 1)

    inside = radius <= last
    index = sector[inside] * (last + 1) + radius[inside]
    size = sectors * (last + 1)
    sums = np.bincount(index, weights=values[inside], minlength=size)
    counts = np.bincount(index, minlength=size)
    profiles = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return profiles.reshape(sectors, last + 1)


def _refined_minimum(profile: np.ndarray, low: int, high: int) -> float:
    """Quadratic sub-bin minimum of profile[low:high + 1]; NaN at window edges"""
    window = profile[low:high + 1]
    if window.size < 3 or np.any(np.isnan(window)):
        return float("nan")
    k = int(np.argmin(window))
    if k == 0 or k == window.size - 1:
        return float("nan")
    left, middle, right = window[k - 1], window[k], window[k + 1]
    curvature = left - 2.0 * middle + right
    offset = 0.5 * (left - right) / curvature if curvature > 0 else 0.0
    return low + k + float(np.clip(offset, -0.5, 0.5))


def sector_ring_radii(spectrum: RasterImage, ring_guesses: Sequence[float],
                      sectors: int = DEFAULT_SECTORS, wedge_half_angle: float = 0.0,
                      axis_angle: float = 0.0, sigma_bins: float = 1.0) -> Tuple[np.ndarray, np.ndarray]:
    """
    Thon-ring minimum radius (bins) in each angular sector

    Each ring is searched within half the distance to its neighbours around
    its guess. Sectors inside the excluded wedge are dropped.

    Returns:
        (sector center angles, radii array of shape (sectors kept, rings))
    """

    guesses = np.asarray(ring_guesses, dtype=float)
    last = min(spectrum.height, spectrum.width) // 2 - 1
    profiles = _sector_profiles(np.asarray(spectrum.values, dtype=float), sectors, last)

    width = 2.0 * math.pi / sectors
    centers = (np.arange(sectors) + 0.5) * width
    from_axis = np.abs(np.mod(centers - axis_angle + math.pi / 2, math.pi) - math.pi / 2)
    kept = from_axis >= wedge_half_angle + 0.5 * width if wedge_half_angle > 0 else np.ones(sectors, bool)

    spacing = np.diff(guesses)
    below = np.concatenate([[spacing[0] if spacing.size else guesses[0] / 2], spacing]) / 2.0
    above = np.concatenate([spacing, [spacing[-1] if spacing.size else guesses[0] / 2]]) / 2.0

    radii = np.full((int(kept.sum()), guesses.size), np.nan)
    for row, j in enumerate(np.flatnonzero(kept)):
        profile = profiles[j]
        filled = np.where(np.isnan(profile), np.nanmean(profile), profile)
        smooth = ndimage.gaussian_filter1d(filled, sigma_bins) if sigma_bins > 0 else filled
        smooth[np.isnan(profile)] = np.nan
        for k, guess in enumerate(guesses):
            low = max(int(math.floor(guess - below[k])), 1)
            high = min(int(math.ceil(guess + above[k])), last)
            radii[row, k] = _refined_minimum(smooth, low, high)

    return centers[kept], radii


def _fit_ellipse(angles: np.ndarray, radii: np.ndarray) -> Ellipse:
    """Algebraic conic fit per ring, then joint geometric refinement"""

    ratios, orientations, scales, rings = [], [], [], []
    for k in range(radii.shape[1]):
        good = np.isfinite(radii[:, k])
        if np.count_nonzero(good) < 5:
            continue
        x = radii[good, k] * np.cos(angles[good])
        y = radii[good, k] * np.sin(angles[good])
        design = np.column_stack([x * x, x * y, y * y])
        (a, b, c), *_ = np.linalg.lstsq(design, np.ones_like(x), rcond=None)
        eigenvalues, eigenvectors = np.linalg.eigh(np.array([[a, b / 2.0], [b / 2.0, c]]))
        if eigenvalues[0] <= 0:
            continue
        major, minor = 1.0 / math.sqrt(eigenvalues[0]), 1.0 / math.sqrt(eigenvalues[1])
        ratios.append(major / minor)
        orientations.append(math.atan2(eigenvectors[1, 0], eigenvectors[0, 0]))
        scales.append(math.sqrt(major * minor))
        rings.append(k)

    if len(rings) < 1:
        raise EstimationError("no Thon ring could be traced around the spectrum")

    ratio0 = float(np.median(ratios))
    angle0 = 0.5 * math.atan2(np.mean(np.sin(2 * np.array(orientations))),
                              np.mean(np.cos(2 * np.array(orientations))))

    selected = radii[:, rings]
    good = np.isfinite(selected)
    sector_index, ring_index = np.nonzero(good)
    observed = selected[good]

    def residuals(p):
        ratio, angle = math.exp(p[0]), p[1]
        delta = angles[sector_index] - angle
        shape = 1.0 / np.sqrt(np.cos(delta) ** 2 / ratio + ratio * np.sin(delta) ** 2)
        return p[2:][ring_index] * shape - observed

    start = np.concatenate([[math.log(ratio0), angle0], scales])
    result = optimize.least_squares(residuals, start, x_scale="jac")

    ratio, angle = math.exp(result.x[0]), result.x[1]
    if ratio < 1.0:
        ratio, angle = 1.0 / ratio, angle + math.pi / 2
    return Ellipse(ratio=float(ratio), angle=float(np.mod(angle, math.pi)))


def correct_astigmatism(spectrum: RasterImage, wedge_half_angle: float = 0.0, axis_angle: float = 0.0,
                        min_frequency: float = 0.0, rings: int = DEFAULT_RINGS,
                        sectors: int = DEFAULT_SECTORS) -> Tuple[RasterImage, Ellipse]:
    """
    Circularize elliptical Thon rings while keeping their mean radii

    Ring minima from the azimuthal average seed per-sector minimum searches;
    the ellipse fitted to those loci defines the angle-dependent radial
    scaling corrected(r, alpha) = original(r g(alpha) / <g>).

    Raises:
        EstimationError: fewer than two rings visible
    """

    if spectrum.plane != PLANE_FREQUENCY:
        raise ValidationError(f"astigmatism correction needs a power spectrum, got {spectrum.plane!r}")

    profile = rms_angular_average(spectrum, wedge_half_angle, axis_angle)
    try:
        guesses = locate_ctf_zeros(profile, min_frequency=min_frequency)
    except EstimationError as exc:
        raise EstimationError(f"Thon rings not detectable: {exc}") from exc
    guesses_bins = np.asarray(guesses[:rings]) / spectrum.pixel_size

    angles, radii = sector_ring_radii(spectrum, guesses_bins, sectors, wedge_half_angle, axis_angle)
    ellipse = _fit_ellipse(angles, radii)
    logger.info(f"Astigmatism: ratio {ellipse.ratio:.5f}, angle {math.degrees(ellipse.angle):.2f} deg")

    mean_shape = float(np.mean(ellipse.shape(np.linspace(0.0, 2.0 * math.pi, 3600, endpoint=False))))
    height, width = spectrum.shape
    ix = np.arange(width) - width // 2
    iy = np.arange(height) - height // 2
    IX, IY = np.meshgrid(ix, iy)
    stretch = ellipse.shape(np.arctan2(IY, IX)) / mean_shape
    rows = IY * stretch + height // 2
    cols = IX * stretch + width // 2

    corrected = ndimage.map_coordinates(np.asarray(spectrum.values, dtype=float), [rows, cols],
                                        order=1, mode="nearest")
    metadata = dict(spectrum.metadata, ellipse_ratio=ellipse.ratio, ellipse_angle=ellipse.angle)
    return spectrum.with_values(corrected, metadata=metadata), ellipse


# ============================================================================
# ZEROS AND POLYNOMIAL
# ============================================================================

def locate_ctf_zeros(profile: pd.DataFrame, sigma_bins: float = 1.0, min_frequency: float = 0.0,
                     prominence: float = 0.05) -> List[float]:
    """
    Minima of a radial profile, sub-bin refined by local quadratic interpolation

    Args:
        profile: DataFrame with s_per_m and value columns (uniform bins)
        sigma_bins: Gaussian pre-smoothing width in bins (0 disables)
        min_frequency: Minima below this frequency are ignored (1/m)
        prominence: Required prominence as a fraction of the profile range

    Raises:
        EstimationError: fewer than 2 minima
    """

    s = profile["s_per_m"].to_numpy(dtype=float)
    values = profile["value"].to_numpy(dtype=float)
    if s.size < 5:
        raise EstimationError("profile too short to locate minima")
    step = s[1] - s[0]

    smooth = ndimage.gaussian_filter1d(values, sigma_bins, mode="nearest") if sigma_bins > 0 else values
    selected = s >= min_frequency
    spread = float(np.ptp(smooth[selected])) if np.any(selected) else 0.0
    if spread <= 0:
        raise EstimationError("profile is flat; no CTF zeros")

    peaks, _ = signal.find_peaks(-smooth, prominence=prominence * spread)
    zeros = []
    for k in peaks:
        if s[k] < min_frequency or k == 0 or k == s.size - 1:
            continue
        left, middle, right = smooth[k - 1], smooth[k], smooth[k + 1]
        curvature = left - 2.0 * middle + right
        offset = 0.5 * (left - right) / curvature if curvature > 0 else 0.0
        zeros.append(float(s[k] + np.clip(offset, -0.5, 0.5) * step))

    if len(zeros) < 2:
        raise EstimationError(f"found {len(zeros)} CTF minima above {min_frequency:.4g} 1/m (need >= 2)")
    logger.debug(f"CTF zeros (1/nm): {[round(z / FREQUENCY_UNIT, 4) for z in zeros]}")
    return zeros


def assign_zero_phases(zeros: Sequence[float], defocus_sign: int, first_order: int = 1) -> List[Tuple[float, float]]:
    """
    Consecutive multiples of pi, starting at defocus_sign * first_order * pi

    A single spectrum cannot tell over- from underfocus, so the sign is
    supplied by the caller.
    """
    if defocus_sign not in (-1, 1):
        raise ValidationError(f"defocus sign must be +1 or -1, got {defocus_sign}")
    return [(float(s), defocus_sign * (first_order + k) * math.pi) for k, s in enumerate(zeros)]


def fit_defocus_polynomial(points: Sequence[Tuple[float, float]], fixed_quartic: Optional[float] = None,
                           wavelength: Optional[float] = None) -> CtfFit:
    """
    Least-squares zeta(s) = a s^4 + b s^2 + c through (s, n pi) pairs

    The fit runs with s in 1/nm; a and b are returned in SI units with their
    linearized covariance. fixed_quartic pins a (rad m^4).

    Raises:
        FitError: rank-deficient design (too few or degenerate zeros)
    """

    data = np.asarray(points, dtype=float).reshape(-1, 2)
    s = data[:, 0] / FREQUENCY_UNIT
    zeta = data[:, 1]
    u2, u4 = s ** 2, s ** 4
    quartic_scale = FREQUENCY_UNIT ** -4
    quadratic_scale = FREQUENCY_UNIT ** -2

    if fixed_quartic is None:
        design = np.column_stack([u4, u2, np.ones_like(s)])
        target = zeta
    else:
        design = np.column_stack([u2, np.ones_like(s)])
        target = zeta - (fixed_quartic / quartic_scale) * u4

    rows, columns = design.shape
    if rows < columns or np.linalg.matrix_rank(design) < columns:
        raise FitError(
            f"{rows} zeros cannot determine {columns} coefficients; "
            f"fix the quartic coefficient at the known C_s",
            {"zeros": rows, "coefficients": columns},
        )

    solution, *_ = np.linalg.lstsq(design, target, rcond=None)
    residual = target - design @ solution
    dof = rows - columns
    variance = float(residual @ residual) / dof if dof > 0 else 0.0
    scaled_covariance = variance * np.linalg.inv(design.T @ design)

    covariance = np.zeros((3, 3))
    if fixed_quartic is None:
        a, b, c = solution[0] * quartic_scale, solution[1] * quadratic_scale, solution[2]
        units = np.array([quartic_scale, quadratic_scale, 1.0])
        covariance = scaled_covariance * np.outer(units, units)
    else:
        a, b, c = fixed_quartic, solution[0] * quadratic_scale, solution[1]
        units = np.array([quadratic_scale, 1.0])
        covariance[1:, 1:] = scaled_covariance * np.outer(units, units)

    order = np.argsort(data[:, 0])
    return CtfFit(
        quartic_coeff=float(a),
        quadratic_coeff=float(b),
        constant_phase=float(c),
        zero_locations=tuple(float(v) for v in data[order, 0]),
        zero_phases=tuple(float(v) for v in data[order, 1]),
        covariance=covariance,
        wavelength=wavelength,
    )


def wrap_half_turn(phase: float) -> float:
    """Representative of phase mod pi in (-pi/2, pi/2]"""
    wrapped = phase - math.pi * round(phase / math.pi)
    return math.pi / 2 if math.isclose(wrapped, -math.pi / 2) else float(wrapped)


def fit_thon_rings(source: RasterImage, beam: ElectronBeam, defocus_sign: int,
                   spherical_aberration: Optional[float] = None,
                   wedge_half_angle: float = math.radians(config.DEFAULT_WEDGE_DEG),
                   axis_angle: float = 0.0, min_frequency: float = 0.0,
                   sigma_bins: float = 1.0, correct: bool = True) -> CtfFit:
    """
    Micrograph (or its power spectrum) to CtfFit

    The constant phase is reported modulo pi in (-pi/2, pi/2]; consecutive
    pi assignment fixes it no better than that.
    """

    spectrum = source if source.plane == PLANE_FREQUENCY else power_spectrum(source)

    ellipse = Ellipse()
    if correct:
        spectrum, ellipse = correct_astigmatism(spectrum, wedge_half_angle, axis_angle, min_frequency)

    profile = rms_angular_average(spectrum, wedge_half_angle, axis_angle)
    zeros = locate_ctf_zeros(profile, sigma_bins=sigma_bins, min_frequency=min_frequency)
    points = assign_zero_phases(zeros, defocus_sign)

    fixed = None
    if spherical_aberration is not None:
        fixed = -0.5 * math.pi * spherical_aberration * beam.wavelength ** 3

    fit = fit_defocus_polynomial(points, fixed_quartic=fixed, wavelength=beam.wavelength)
    constant = wrap_half_turn(fit.constant_phase)
    logger.info(
        f"Thon fit: {len(zeros)} zeros, defocus {fit.defocus * 1e9:.1f} nm, "
        f"c {math.degrees(constant):.2f} deg"
    )

    return CtfFit(
        quartic_coeff=fit.quartic_coeff,
        quadratic_coeff=fit.quadratic_coeff,
        constant_phase=constant,
        ellipse=ellipse,
        zero_locations=fit.zero_locations,
        zero_phases=fit.zero_phases,
        covariance=fit.covariance,
        wavelength=beam.wavelength,
    )


# ============================================================================
# PHASE SCAN
# ============================================================================

def _sinusoid_power(positions: np.ndarray, values: np.ndarray, frequency: float) -> float:
    """Variance explained by mean + cos + sin at `frequency`"""
    theta = 2.0 * math.pi * frequency * positions
    design = np.column_stack([np.ones_like(theta), np.cos(theta), np.sin(theta)])
    coefficients, *_ = np.linalg.lstsq(design, values, rcond=None)
    residual = values - design @ coefficients
    centered = values - values.mean()
    return float(centered @ centered - residual @ residual)


def analyze_phase_scan(scan: Sequence[Tuple[float, Union[CtfFit, float]]]) -> PhaseScanResult:
    """
    Peak-to-peak laser phase and period from constant phases vs beam position

    peak_to_peak = 2^{3/2} std(c), exact for sinusoids sampled uniformly over
    whole periods. The period maximizes the least-squares sinusoid power:
    coarse grid, then the shared continuous refinement.

    Raises:
        ValidationError: fewer than 8 positions
        EstimationError: scan spans less than one period
    """

    if len(scan) < MIN_SCAN_POSITIONS:
        raise ValidationError(f"phase scan needs >= {MIN_SCAN_POSITIONS} positions, got {len(scan)}")

    pairs = sorted(
        (float(position), float(item.constant_phase if isinstance(item, CtfFit) else item))
        for position, item in scan
    )
    positions = np.array([p for p, _ in pairs])
    phases = np.array([c for _, c in pairs])
    if np.any(np.diff(positions) <= 0):
        raise ValidationError("phase-scan positions must be distinct")

    peak_to_peak = float(np.std(phases, ddof=0) * RMS_TO_PEAK_TO_PEAK)

    spacing = float(np.median(np.diff(positions)))
    coverage = float(positions[-1] - positions[0]) + spacing
    lowest, highest = 0.5 / coverage, 0.5 / spacing
    step = 0.05 / coverage
    grid = np.arange(lowest, highest + 0.5 * step, step)
    powers = np.array([_sinusoid_power(positions, phases, f) for f in grid])
    coarse = float(grid[int(np.argmax(powers))])
    frequency = float(refine_frequency_peak(
        lambda f: _sinusoid_power(positions, phases, float(f[0])), coarse, step, xatol=1e-6
    )[0])

    period = 1.0 / frequency
    if period > coverage * (1.0 + SCAN_COVERAGE_SLACK):
        raise EstimationError(
            f"scan covers {coverage:.4g} m, less than one period ({period:.4g} m)"
        )

    logger.info(f"Phase scan: peak-to-peak {math.degrees(peak_to_peak):.2f} deg, period {period * 1e9:.1f} nm")
    return PhaseScanResult(positions=positions, phases=phases, peak_to_peak=peak_to_peak, period=period)


# ============================================================================
# POWER DEPENDENCE
# ============================================================================

def fit_power_slope(powers: Sequence[float], phases: Sequence[float],
                    phase_errors: Optional[Sequence[float]] = None) -> PowerSlope:
    """
    Least-squares line eta0 = slope * P through the origin

    With phase_errors the fit is weighted and the variance is 1 / sum(w P^2);
    otherwise it comes from the residual scatter, which needs two points.

    Args:
        powers: Input laser powers (W), > 0
        phases: Antinode phases at those powers (rad)
        phase_errors: Optional one-sigma phase uncertainties (rad), > 0
    """

    p = np.asarray(powers, dtype=float)
    eta = np.asarray(phases, dtype=float)
    if p.ndim != 1 or p.size == 0 or p.shape != eta.shape:
        raise ValidationError("powers and phases must be non-empty sequences of equal length")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(eta))):
        raise ValidationError("powers and phases must be finite")
    if np.any(p <= 0):
        raise ValidationError("input powers must be > 0")

    if phase_errors is not None:
        sigma = np.asarray(phase_errors, dtype=float)
        if sigma.shape != p.shape or np.any(~np.isfinite(sigma)) or np.any(sigma <= 0):
            raise ValidationError("phase_errors must be finite, > 0 and match the powers")
        weights = 1.0 / sigma ** 2
        normal = float(np.sum(weights * p * p))
        slope = float(np.sum(weights * p * eta)) / normal
        variance = 1.0 / normal
    else:
        normal = float(np.sum(p * p))
        slope = float(np.sum(p * eta)) / normal
        if p.size > 1:
            residual = eta - slope * p
            variance = float(np.sum(residual ** 2)) / (p.size - 1) / normal
        else:
            variance = float("nan")

    logger.info(f"Power slope: {math.degrees(slope):.3f} deg/W from {p.size} point(s)")
    return PowerSlope(slope=slope, variance=variance, powers=p, phases=eta)


def predicted_power_slope(mode: LaserMode, beam: ElectronBeam, cavity_gain: float) -> float:
    """Antinode phase per input watt (rad/W) for `cavity_gain` circulating watts per input watt"""
    if not np.isfinite(cavity_gain) or cavity_gain <= 0:
        raise ValidationError(f"cavity gain must be > 0, got {cavity_gain}")
    return peak_phase_from_power(cavity_gain, mode, beam)


def slope_difference(first: float, second: float) -> float:
    """|a - b| / max(|a|, |b|); 0 when both vanish"""
    scale = max(abs(first), abs(second))
    return abs(first - second) / scale if scale > 0 else 0.0
