"""
Contrast transfer with a laser phase plate

Frequency-plane conventions: every stored map has its DC term at index
(height // 2, width // 2); a diffraction-plane position x corresponds to the
object frequency s = x / (lambda_e f).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd
import scipy.fft
from scipy import ndimage

import config
from services.errors import EstimationError, SamplingError, ValidationError
from services.physics import ElectronBeam, LaserMode, phase_profile
from services.raster import (
    KIND_CTF,
    KIND_INTENSITY,
    KIND_PHASE,
    PLANE_FREQUENCY,
    PLANE_IMAGE,
    RasterImage,
)
from services.wave_propagation import GridSpec

logger = logging.getLogger(__name__)

WEAK_PHASE_LIMIT = 0.2          # rad
IMAGINARY_RESIDUE_LIMIT = 1e-8  # relative to the image modulation peak
STRIPE_EDGE_LEVEL = 1.0 - math.exp(-2.0)

# ============================================================================
# TYPES
# ============================================================================

@dataclass(frozen=True)
class OpticsConfig:
    """
    Objective-lens settings

    defocus > 0 is underfocus. astigmatism is the amplitude of the defocus
    modulation, DeltaZ(alpha) = defocus + astigmatism * cos(2 (alpha - astigmatism_angle)).
    """

    focal_length: float
    defocus: float = 0.0
    spherical_aberration: float = 0.0
    envelope_half_max_radius: float = 1.0 / (config.DEFAULT_ENVELOPE_NM * 1e-9)
    astigmatism: float = 0.0
    astigmatism_angle: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.focal_length) or self.focal_length <= 0:
            raise ValidationError(f"focal length must be > 0, got {self.focal_length}")
        if not np.isfinite(self.envelope_half_max_radius) or self.envelope_half_max_radius <= 0:
            raise ValidationError(
                f"envelope half-max radius must be > 0, got {self.envelope_half_max_radius}"
            )
        if not np.isfinite(self.spherical_aberration) or self.spherical_aberration < 0:
            raise ValidationError(f"C_s must be >= 0, got {self.spherical_aberration}")
        for name in ("defocus", "astigmatism", "astigmatism_angle"):
            if not np.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite")


@dataclass(frozen=True)
class PlateAlignment:
    """Electron-beam position relative to the laser focus, and laser-axis orientation"""

    transverse_offset: float = 0.0   # along the laser axis (m)
    lateral_offset: float = 0.0      # across the laser axis (m)
    rotation: float = 0.0            # rad, [0, pi)

    def __post_init__(self):
        values = (self.transverse_offset, self.lateral_offset, self.rotation)
        if not all(np.isfinite(v) for v in values):
            raise ValidationError("alignment offsets and rotation must be finite")
        if not 0 <= self.rotation < math.pi:
            raise ValidationError(f"rotation must be in [0, pi), got {self.rotation}")

    @property
    def centered(self) -> bool:
        return self.transverse_offset == 0 and self.lateral_offset == 0


@dataclass(frozen=True)
class CtfMap:
    """
    CTF sampled on a centered frequency grid

    The symmetric form is real. The general form is complex with
    CTF(-s) = conj(CTF(s)); its real part is the inversion-symmetrized CTF.
    """

    values: np.ndarray
    frequency_step: float
    symmetric: bool = True
    axis_angle: float = 0.0
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise ValidationError(f"CTF map must be 2-D, got shape {values.shape}")
        if not np.isfinite(self.frequency_step) or self.frequency_step <= 0:
            raise ValidationError(f"frequency step must be > 0, got {self.frequency_step}")
        if np.max(np.abs(values), initial=0.0) > 1.0 + 1e-12:
            raise ValidationError("CTF magnitude exceeds 1")
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    def frequencies(self) -> Tuple[np.ndarray, np.ndarray]:
        height, width = self.values.shape
        sx = (np.arange(width) - width // 2) * self.frequency_step
        sy = (np.arange(height) - height // 2) * self.frequency_step
        return np.meshgrid(sx, sy)

    def to_raster(self, part: str = "real") -> RasterImage:
        if part == "real":
            values = np.real(self.values)
        elif part == "imag":
            values = np.imag(self.values)
        elif part == "abs":
            values = np.abs(self.values)
        else:
            raise ValidationError(f"unknown CTF part {part!r}")
        return RasterImage(
            values=np.array(values, dtype=float),
            pixel_size=self.frequency_step,
            plane=PLANE_FREQUENCY,
            kind=KIND_CTF,
            metadata=dict(self.metadata, symmetric=self.symmetric, part=part),
        )


@dataclass(frozen=True)
class StripeSignature:
    count: int
    centers: Tuple[float, ...]       # 1/m, across the laser axis
    half_widths: Tuple[float, ...]   # 1/m
    frequencies: np.ndarray = field(repr=False, compare=False)
    footprint: np.ndarray = field(repr=False, compare=False)


# ============================================================================
# BUILDING BLOCKS
# ============================================================================

def aberration_phase(s, optics: OpticsConfig, beam: ElectronBeam, azimuth=None):
    """
    gamma(s) = pi/2 (-2 DeltaZ lambda_e s^2 + C_s lambda_e^3 s^4)

    Args:
        s: Radial spatial frequency (1/m), scalar or array, >= 0
        optics: Lens settings
        beam: Electron beam (for lambda_e)
        azimuth: Frequency direction (rad); only used when astigmatism != 0
    """

    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValidationError("radial frequency must be >= 0")

    defocus = optics.defocus
    if optics.astigmatism and azimuth is not None:
        defocus = defocus + optics.astigmatism * np.cos(2.0 * (np.asarray(azimuth) - optics.astigmatism_angle))

    wavelength = beam.wavelength
    s2 = s * s
    gamma = 0.5 * math.pi * (-2.0 * defocus * wavelength * s2
                             + optics.spherical_aberration * wavelength ** 3 * s2 * s2)
    return gamma if np.ndim(gamma) else float(gamma)


def envelope(s, optics: OpticsConfig):
    """Gaussian in |s| equal to 1/2 at the configured half-max radius"""
    s = np.asarray(s, dtype=float)
    value = np.exp(-math.log(2.0) * (s / optics.envelope_half_max_radius) ** 2)
    return value if np.ndim(value) else float(value)


def laser_phase_of_frequency(s_x, s_y, mode: LaserMode, align: PlateAlignment,
                             focal_length: float, beam: ElectronBeam):
    """
    Laser phase seen by the wave scattered to frequency (s_x, s_y)

    The diffraction-plane position x = s lambda_e f is rotated into the
    laser frame (u along the laser axis, v across it) and measured from the
    beam center given by the alignment offsets.
    """

    scale = beam.wavelength * focal_length
    x = np.asarray(s_x, dtype=float) * scale
    y = np.asarray(s_y, dtype=float) * scale
    cos_r, sin_r = math.cos(align.rotation), math.sin(align.rotation)
    u = x * cos_r + y * sin_r
    v = -x * sin_r + y * cos_r
    eta = phase_profile(u - align.transverse_offset, v - align.lateral_offset, mode)
    return eta if np.ndim(eta) else float(eta)


def max_frequency_step(mode: LaserMode, beam: ElectronBeam, focal_length: float) -> float:
    """Largest frequency step resolving the standing wave, lambda_L / (8 lambda_e f)"""
    return mode.wavelength / (8.0 * beam.wavelength * focal_length)


def stripe_frequency(mode: LaserMode, beam: ElectronBeam, focal_length: float) -> float:
    """s0 = w0 / (lambda_e f)"""
    return mode.waist / (beam.wavelength * focal_length)


def frequency_grid_for(image: RasterImage) -> GridSpec:
    """Frequency grid matching an image's discrete Fourier transform"""
    if image.width != image.height:
        raise ValidationError(f"frequency grids need square images, got {image.width}x{image.height}")
    return GridSpec(image.width, image.height, 1.0 / (image.width * image.pixel_size))


# ============================================================================
# CTF MAP
# ============================================================================

def ctf_map(grid: GridSpec, optics: OpticsConfig, mode: LaserMode, align: PlateAlignment,
            beam: ElectronBeam, symmetric: bool = True) -> CtfMap:
    """
    CTF over a centered frequency grid

    symmetric=True gives sin(eta(s) - eta(0) + gamma(s)) E(s). With
    symmetric=False the general form
    (i/2)(e^{i zeta(0)} e^{-i zeta(-s)} - e^{-i zeta(0)} e^{i zeta(s)}) E(s),
    zeta = eta + gamma, is returned; it reduces to the symmetric form
    whenever eta(s) = eta(-s).

    Args:
        grid: width, height and frequency step (grid.pixel_size, 1/m)
    """

    step = grid.pixel_size
    limit = max_frequency_step(mode, beam, optics.focal_length)
    if step > limit:
        raise SamplingError(
            f"frequency step {step:.4g} 1/m does not resolve the standing wave; "
            f"it must be <= {limit:.4g} 1/m"
        )

    sx = (np.arange(grid.width) - grid.width // 2) * step
    sy = (np.arange(grid.height) - grid.height // 2) * step
    SX, SY = np.meshgrid(sx, sy)
    radius = np.hypot(SX, SY)
    azimuth = np.arctan2(SY, SX)

    gamma = aberration_phase(radius, optics, beam, azimuth)
    damping = envelope(radius, optics)
    eta = laser_phase_of_frequency(SX, SY, mode, align, optics.focal_length, beam)
    eta_origin = laser_phase_of_frequency(0.0, 0.0, mode, align, optics.focal_length, beam)

    if symmetric:
        if not align.centered:
            logger.warning("symmetric CTF form requested for an off-center alignment")
        values = np.sin(eta - eta_origin + gamma) * damping
    else:
        eta_mirror = laser_phase_of_frequency(-SX, -SY, mode, align, optics.focal_length, beam)
        zeta = eta + gamma
        zeta_mirror = eta_mirror + gamma
        values = 0.5j * (np.exp(1j * (eta_origin - zeta_mirror))
                         - np.exp(-1j * (eta_origin - zeta))) * damping

    return CtfMap(
        values=values,
        frequency_step=step,
        symmetric=symmetric,
        axis_angle=align.rotation,
        metadata={
            "eta_origin": eta_origin,
            "defocus": optics.defocus,
            "spherical_aberration": optics.spherical_aberration,
            "envelope_half_max_radius": optics.envelope_half_max_radius,
        },
    )


# ============================================================================
# WEAK-PHASE IMAGE
# ============================================================================

def simulate_weak_phase_image(object_phase: RasterImage, ctf: CtfMap) -> RasterImage:
    """
    Linear image of a weak phase object, 1 + F^-1[-2 phi_hat(s) CTF(s)]

    The Nyquist row and column carry no conjugate partner on an even grid
    and are dropped, which keeps the image exactly real.
    """

    phase = np.asarray(object_phase.values, dtype=float)
    if phase.shape != ctf.shape:
        raise ValidationError(f"object grid {phase.shape} does not match CTF grid {ctf.shape}")
    height, width = phase.shape
    for n in (width, height):
        expected = 1.0 / (n * object_phase.pixel_size)
        if not math.isclose(ctf.frequency_step, expected, rel_tol=1e-6):
            raise ValidationError(
                f"CTF frequency step {ctf.frequency_step:.6g} 1/m does not match "
                f"1/(n p) = {expected:.6g} 1/m"
            )

    peak = float(np.max(np.abs(phase), initial=0.0))
    if peak > WEAK_PHASE_LIMIT:
        logger.warning(f"object phase reaches {peak:.3f} rad; weak-phase approximation assumed")

    workers = config.fft_workers()
    transfer = scipy.fft.ifftshift(ctf.values)
    spectrum = -2.0 * scipy.fft.fft2(phase, workers=workers) * transfer
    if height % 2 == 0:
        spectrum[height // 2, :] = 0
    if width % 2 == 0:
        spectrum[:, width // 2] = 0
    modulation = scipy.fft.ifft2(spectrum, workers=workers)

    scale = float(np.max(np.abs(modulation.real), initial=0.0))
    residue = float(np.max(np.abs(modulation.imag), initial=0.0))
    if scale > 0 and residue > IMAGINARY_RESIDUE_LIMIT * scale:
        logger.warning(f"discarding imaginary image residue {residue / scale:.2e} of peak")

    return RasterImage(
        values=1.0 + modulation.real,
        pixel_size=object_phase.pixel_size,
        plane=PLANE_IMAGE,
        kind=KIND_INTENSITY,
    )


def random_phase_object(n: int, pixel_size: float, rms: float,
                        correlation_length: float = 0.0, seed: int = 0) -> RasterImage:
    """Zero-mean Gaussian random phase with the given RMS (rad) and correlation length (m)"""

    if n < 16 or n % 2:
        raise ValidationError(f"object grid must be even and >= 16, got {n}")
    if rms < 0 or correlation_length < 0:
        raise ValidationError("rms and correlation length must be >= 0")

    generator = np.random.Generator(np.random.Philox(seed))
    values = generator.standard_normal((n, n))
    if correlation_length > 0:
        values = ndimage.gaussian_filter(values, sigma=correlation_length / pixel_size, mode="wrap")

    values -= values.mean()
    spread = values.std()
    if spread > 0:
        values *= rms / spread
    return RasterImage(values, pixel_size, PLANE_IMAGE, KIND_PHASE)


def power_spectrum(image: RasterImage) -> RasterImage:
    """|F[I - <I>]|^2 / N, DC at the grid center"""
    grid = frequency_grid_for(image)
    values = np.asarray(image.values, dtype=float)
    spectrum = scipy.fft.fft2(values - values.mean(), workers=config.fft_workers())
    power = np.abs(scipy.fft.fftshift(spectrum)) ** 2 / values.size
    return RasterImage(power, grid.pixel_size, PLANE_FREQUENCY, KIND_INTENSITY)


# ============================================================================
# ANGULAR REDUCTIONS
# ============================================================================

def rms_angular_average(spectrum: Union[CtfMap, RasterImage], wedge_half_angle: float = 0.0,
                        axis_angle: Optional[float] = None) -> pd.DataFrame:
    """
    Root mean square over angle in radial bins one frequency step wide

    Directions within wedge_half_angle of the laser axis (both senses) are
    excluded; the DC pixel is always kept.

    Args:
        spectrum: CtfMap or frequency-plane RasterImage
        wedge_half_angle: Excluded half-angle (rad), in [0, pi/2)
        axis_angle: Laser-axis direction; defaults to the map's own axis

    Returns:
        DataFrame with columns s_per_m, value, count
    """

    if not 0 <= wedge_half_angle < math.pi / 2:
        raise ValidationError(f"wedge half-angle must be in [0, pi/2), got {wedge_half_angle}")

    if isinstance(spectrum, CtfMap):
        values, step = spectrum.values, spectrum.frequency_step
        default_axis = spectrum.axis_angle
    else:
        if spectrum.plane != PLANE_FREQUENCY:
            raise ValidationError(f"angular averages need a frequency-plane raster, got {spectrum.plane!r}")
        values, step = spectrum.values, spectrum.pixel_size
        default_axis = spectrum.metadata.get("axis_angle", 0.0)
    axis = default_axis if axis_angle is None else axis_angle

    height, width = values.shape
    ix = np.arange(width) - width // 2
    iy = np.arange(height) - height // 2
    IX, IY = np.meshgrid(ix, iy)
    bins = np.rint(np.hypot(IX, IY)).astype(np.int64)
    last = min(height, width) // 2 - 1

    direction = np.arctan2(IY, IX) - axis
    from_axis = np.abs(np.mod(direction + math.pi / 2, math.pi) - math.pi / 2)
    keep = ((from_axis >= wedge_half_angle) | (bins == 0)) & (bins <= last)

    squared = np.abs(values) ** 2
    sums = np.bincount(bins[keep], weights=squared[keep], minlength=last + 1)
    counts = np.bincount(bins[keep], minlength=last + 1)

    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise ValidationError(
            f"radial bin {int(empty[0])} is empty after excluding a "
            f"{math.degrees(wedge_half_angle):.1f} degree wedge"
        )

    return pd.DataFrame({
        "s_per_m": np.arange(last + 1) * step,
        "value": np.sqrt(sums / counts),
        "count": counts,
    })


def plateau_levels(profile: pd.DataFrame, mode: LaserMode, beam: ElectronBeam, focal_length: float,
                   optics: Optional[OpticsConfig] = None,
                   second_window: Tuple[float, float] = (4.0, 8.0)) -> Tuple[float, float]:
    """
    Mean profile level on the two plateaus of a laser-phase-plate CTF

    The first window is [lambda_L/(4 lambda_e f), lambda_L/(2 lambda_e f)],
    the second spans second_window in units of s0 = w0/(lambda_e f). Passing
    optics divides the profile by the envelope first.
    """

    s = profile["s_per_m"].to_numpy()
    value = profile["value"].to_numpy()
    if optics is not None:
        value = value / envelope(s, optics)

    base = beam.wavelength * focal_length
    s0 = stripe_frequency(mode, beam, focal_length)
    windows = (
        (mode.wavelength / (4.0 * base), mode.wavelength / (2.0 * base)),
        (second_window[0] * s0, second_window[1] * s0),
    )

    levels = []
    for low, high in windows:
        selected = (s >= low) & (s <= high)
        if not np.any(selected):
            raise ValidationError(
                f"profile has no bins in [{low:.4g}, {high:.4g}] 1/m; "
                f"extend the grid or refine the frequency step"
            )
        levels.append(float(np.mean(value[selected])))
    return levels[0], levels[1]


def dark_stripe_half_width(ctf: CtfMap, optics: OpticsConfig) -> float:
    """
    Distance from the origin, across the laser axis, at which
    |CTF| / (|sin eta(0)| E) first reaches 1 - e^-2
    """

    eta_origin = ctf.metadata.get("eta_origin")
    if eta_origin is None or abs(math.sin(eta_origin)) < 1e-12:
        raise EstimationError("no dark stripe: the unscattered beam carries no laser phase")

    height, width = ctf.shape
    samples = np.arange(min(height, width) // 2)
    direction = ctf.axis_angle + math.pi / 2
    cols = width // 2 + samples * math.cos(direction)
    rows = height // 2 + samples * math.sin(direction)
    magnitude = ndimage.map_coordinates(np.abs(ctf.values), [rows, cols], order=1)

    s = samples * ctf.frequency_step
    ratio = magnitude / (abs(math.sin(eta_origin)) * envelope(s, optics))
    above = np.flatnonzero(ratio >= STRIPE_EDGE_LEVEL)
    if above.size == 0:
        raise EstimationError("CTF never leaves the dark stripe inside the grid")

    k = int(above[0])
    if k == 0:
        return 0.0
    # linear interpolation of the crossing
    fraction = (STRIPE_EDGE_LEVEL - ratio[k - 1]) / (ratio[k] - ratio[k - 1])
    return float((k - 1 + fraction) * ctf.frequency_step)


def misalignment_signature(align: PlateAlignment, mode: LaserMode, beam: ElectronBeam,
                           focal_length: float, threshold: float = math.exp(-2.0),
                           step: Optional[float] = None, extent: Optional[float] = None,
                           samples_per_period: int = 16) -> StripeSignature:
    """
    Stripes of the frequency plane that carry laser phase

    Both the scattered wave at s and its mirror at -s are considered, so an
    offset beam line shows up as a pair of stripes at +/- offset/(lambda_e f).
    Within one standing-wave period along the laser axis the maximum phase
    is compared with threshold * eta0.
    """

    base = beam.wavelength * focal_length
    s0 = mode.waist / base
    period = mode.wavelength / (2.0 * base)
    step = s0 / 50.0 if step is None else step
    if extent is None:
        extent = (abs(align.lateral_offset) + 4.0 * mode.waist) / base

    across = np.arange(-extent, extent + 0.5 * step, step)
    along = np.arange(samples_per_period) * (period / samples_per_period)
    A, V = np.meshgrid(along, across)

    cos_r, sin_r = math.cos(align.rotation), math.sin(align.rotation)
    SX = A * cos_r - V * sin_r
    SY = A * sin_r + V * cos_r
    eta = laser_phase_of_frequency(SX, SY, mode, align, focal_length, beam)
    eta_mirror = laser_phase_of_frequency(-SX, -SY, mode, align, focal_length, beam)
    strongest = np.maximum(eta, eta_mirror).max(axis=1)

    footprint = strongest > threshold * mode.peak_phase if mode.peak_phase > 0 else np.zeros_like(across, bool)
    edges = np.diff(np.concatenate(([0], footprint.astype(np.int8), [0])))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1) - 1

    centers = tuple(float(0.5 * (across[a] + across[b])) for a, b in zip(starts, stops))
    half_widths = tuple(float(0.5 * (across[b] - across[a]) + 0.5 * step) for a, b in zip(starts, stops))
    logger.debug(f"{len(centers)} stripe(s) at {[f'{c:.4g}' for c in centers]} 1/m")

    return StripeSignature(
        count=len(centers),
        centers=centers,
        half_widths=half_widths,
        frequencies=across,
        footprint=footprint,
    )
