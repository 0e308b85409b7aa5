"""
Paraxial electron wave propagation and Ronchigram synthesis

The Ronchigram is formed by propagating e^{-i eta} from the phase-plate
plane over the plate-to-diffraction-plane offset Delta; the detector sees
that field magnified by M f / Delta.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.fft
from scipy import special

import config
from services.errors import SamplingError, ValidationError
from services.physics import ElectronBeam, LaserMode, phase_profile
from services.raster import KIND_INTENSITY, PLANE_IMAGE, RasterImage

logger = logging.getLogger(__name__)

PLANE_PHASE_PLATE = "phase-plate-plane"
PLANE_IMAGE_FIELD = "image-plane"
PLANE_GENERIC = "generic"

PADDING = 2
MIN_SAMPLES_PER_FRINGE = 4

# ============================================================================
# TYPES
# ============================================================================

@dataclass(frozen=True)
class ComplexField:
    values: np.ndarray
    pixel_size: float
    plane_tag: str = PLANE_GENERIC

    def __post_init__(self):
        values = np.asarray(self.values, dtype=complex)
        if values.ndim != 2:
            raise ValidationError(f"field must be 2-D, got shape {values.shape}")
        height, width = values.shape
        if width < 16 or height < 16 or width % 2 or height % 2:
            raise ValidationError(f"field dimensions must be even and >= 16, got {width}x{height}")
        if not np.isfinite(self.pixel_size) or self.pixel_size <= 0:
            raise ValidationError(f"pixel_size must be > 0, got {self.pixel_size}")
        if self.plane_tag not in (PLANE_PHASE_PLATE, PLANE_IMAGE_FIELD, PLANE_GENERIC):
            raise ValidationError(f"unknown plane tag {self.plane_tag!r}")
        object.__setattr__(self, "values", values)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def total_intensity(self) -> float:
        return float(np.sum(np.abs(self.values) ** 2) * self.pixel_size ** 2)


@dataclass(frozen=True)
class RonchigramSetup:
    """
    Geometry of a Ronchigram exposure

    delta is the signed distance of the phase plate downstream of the
    diffraction plane; rotation is the laser-axis angle on the detector and
    laser_center the detector-plane position (m) of the laser focus.
    """

    beam: ElectronBeam
    mode: LaserMode
    delta: float
    focal_length: float
    magnification: float
    rotation: float = 0.0
    laser_center: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not np.isfinite(self.delta):
            raise ValidationError(f"delta must be finite, got {self.delta}")
        if self.focal_length <= 0 or self.magnification <= 0:
            raise ValidationError("focal length and magnification must be > 0")

    @property
    def detector_scale(self) -> float:
        """Detector distance per phase-plate distance, M f / |Delta|"""
        if self.delta == 0:
            raise ValidationError("detector scale is undefined for delta = 0")
        return self.magnification * self.focal_length / abs(self.delta)


@dataclass(frozen=True)
class GridSpec:
    width: int
    height: int
    pixel_size: float

    def __post_init__(self):
        if self.width < 16 or self.height < 16 or self.width % 2 or self.height % 2:
            raise ValidationError(f"grid must be even and >= 16, got {self.width}x{self.height}")
        if self.pixel_size <= 0:
            raise ValidationError(f"grid pixel size must be > 0, got {self.pixel_size}")


# ============================================================================
# FRESNEL PROPAGATION
# ============================================================================

def fresnel_transfer_function(shape: Tuple[int, int], pixel_size: float,
                              distance: float, wavenumber: float) -> np.ndarray:
    """Exact transfer function of h_z on an FFT-ordered grid"""
    qy = 2.0 * math.pi * scipy.fft.fftfreq(shape[0], d=pixel_size)
    qx = 2.0 * math.pi * scipy.fft.fftfreq(shape[1], d=pixel_size)
    q2 = qy[:, None] ** 2 + qx[None, :] ** 2
    return np.exp(1j * wavenumber * distance) * np.exp(-1j * distance * q2 / (2.0 * wavenumber))


def check_propagation_sampling(shape: Tuple[int, int], pixel_size: float,
                               distance: float, wavenumber: float) -> None:
    """
    The sampled transfer-function chirp stays below Nyquist when
    N_padded * dx^2 >= lambda |z|
    """
    wavelength = 2.0 * math.pi / wavenumber
    required = int(math.ceil(wavelength * abs(distance) / pixel_size ** 2 / PADDING))
    smallest = min(shape)
    if smallest < required:
        required += required % 2
        raise SamplingError(
            f"propagation over {distance:.4g} m with {pixel_size:.4g} m pixels needs a grid of "
            f"at least {required}x{required} (got {shape[1]}x{shape[0]})",
            required=required,
        )


def fresnel_propagate(field: ComplexField, distance: float, wavenumber: float) -> ComplexField:
    """
    Convolve a field with the Fresnel kernel h_z

    The field is zero-padded by 2 per axis and multiplied by the exact
    transfer function; the central window is returned.
    """

    if not np.isfinite(distance) or distance == 0:
        raise ValidationError(f"propagation distance must be non-zero, got {distance}")
    check_propagation_sampling(field.values.shape, field.pixel_size, distance, wavenumber)

    height, width = field.values.shape
    padded_shape = (PADDING * height, PADDING * width)
    top, left = (padded_shape[0] - height) // 2, (padded_shape[1] - width) // 2

    padded = np.zeros(padded_shape, dtype=complex)
    padded[top:top + height, left:left + width] = field.values

    workers = config.fft_workers()
    spectrum = scipy.fft.fft2(padded, workers=workers)
    spectrum *= fresnel_transfer_function(padded_shape, field.pixel_size, distance, wavenumber)
    propagated = scipy.fft.ifft2(spectrum, workers=workers)

    return ComplexField(
        values=propagated[top:top + height, left:left + width],
        pixel_size=field.pixel_size,
        plane_tag=field.plane_tag,
    )


# ============================================================================
# RONCHIGRAM
# ============================================================================

def predicted_detector_wavevector(setup: RonchigramSetup) -> Tuple[float, float]:
    """Fringe spatial frequency on the detector (cycles/m), (2/lambda_L) |Delta|/(M f)"""
    magnitude = 2.0 / setup.mode.wavelength / setup.detector_scale
    return magnitude * math.cos(setup.rotation), magnitude * math.sin(setup.rotation)


def synthesize_ronchigram(setup: RonchigramSetup, grid: GridSpec) -> RasterImage:
    """
    |psi_im|^2 on the detector, normalized to 1 far from the laser

    The uniform part of e^{-i eta} propagates to the plane wave e^{i k Delta}
    exactly, so only the localized remainder e^{-i eta} - 1 goes through the
    padded FFT.
    """

    if setup.delta == 0:
        raise ValidationError(
            "delta = 0 is the phase-plate imaging condition; use ctf_engine.ctf_map instead"
        )

    plate_pixel = grid.pixel_size / setup.detector_scale
    fringe = setup.mode.wavelength / 2.0
    samples = fringe / plate_pixel
    if samples < MIN_SAMPLES_PER_FRINGE:
        needed = setup.detector_scale * fringe / MIN_SAMPLES_PER_FRINGE
        raise SamplingError(
            f"{samples:.2f} samples per standing-wave fringe; detector pixel must be <= {needed:.4g} m"
        )

    # Detector pixel j sits at phase-plate coordinate (Delta / M f) x_j
    sign = math.copysign(1.0, setup.delta)
    x_det = (np.arange(grid.width) - grid.width // 2) * grid.pixel_size
    y_det = (np.arange(grid.height) - grid.height // 2) * grid.pixel_size
    xd, yd = np.meshgrid(x_det, y_det)
    xd = xd - setup.laser_center[0]
    yd = yd - setup.laser_center[1]
    cos_r, sin_r = math.cos(setup.rotation), math.sin(setup.rotation)
    along = (xd * cos_r + yd * sin_r) / setup.detector_scale * sign
    across = (-xd * sin_r + yd * cos_r) / setup.detector_scale * sign

    eta = phase_profile(along, across, setup.mode)
    if not np.any(eta):
        return RasterImage(np.ones((grid.height, grid.width)), grid.pixel_size, PLANE_IMAGE, KIND_INTENSITY)

    # The detector grid maps onto a phase-plate grid with pixel plate_pixel,
    # flipped when Delta < 0, which the coordinates above already encode
    perturbation = ComplexField(np.expm1(-1j * eta), plate_pixel, PLANE_PHASE_PLATE)
    propagated = fresnel_propagate(perturbation, setup.delta, setup.beam.wavenumber)

    plane_wave = np.exp(1j * setup.beam.wavenumber * setup.delta)
    intensity = np.abs(plane_wave + propagated.values) ** 2

    return RasterImage(
        values=intensity,
        pixel_size=grid.pixel_size,
        plane=PLANE_IMAGE,
        kind=KIND_INTENSITY,
        metadata={"delta": setup.delta, "plate_pixel": plate_pixel},
    )


# ============================================================================
# CLOSED-FORM CONTRAST
# ============================================================================

def _contrast_phase(delta: float, k: float, k_l: float) -> float:
    return 2.0 * delta * k_l ** 2 / k


def analytic_fringe_contrast(peak_phase: float, delta: float, k: float, k_l: float) -> float:
    """
    Two-term Jacobi-Anger contrast, 4 J1(eta0/2)/J0(eta0/2) sin(2 Delta k_L^2 / k)

    The normalized image is 1 - C cos(2 k_L x Delta/(M f)); C is returned
    with its sign.
    """

    if peak_phase < 0 or peak_phase >= math.pi:
        raise ValidationError(f"two-term expansion needs 0 <= eta0 < pi, got {peak_phase}")
    if peak_phase > 1.5:
        logger.warning(f"eta0 = {peak_phase:.3f} rad is outside the two-term expansion regime")

    half = peak_phase / 2.0
    j0 = special.j0(half)
    if j0 == 0:
        raise ValidationError("J0(eta0/2) = 0")
    return float(4.0 * special.j1(half) / j0 * math.sin(_contrast_phase(delta, k, k_l)))


def exact_fringe_contrast(peak_phase: float, delta: float, k: float, k_l: float,
                          orders: int = 40) -> float:
    """
    Fundamental amplitude of the full Jacobi-Anger series for
    eta = eta0/2 (1 + cos 2 k_L x), 4 sum_m J_m J_{m+1} sin((2m+1) phi)
    """

    if peak_phase < 0:
        raise ValidationError(f"eta0 must be >= 0, got {peak_phase}")
    half = peak_phase / 2.0
    phi = _contrast_phase(delta, k, k_l)
    m = np.arange(orders)
    terms = special.jv(m, half) * special.jv(m + 1, half) * np.sin((2 * m + 1) * phi)
    return float(4.0 * np.sum(terms))


def contrast_maximizing_offsets(beam: ElectronBeam, laser_wavelength: float, count: int) -> list:
    """Delta_max = (pi/2)(k/k_L^2)(j + 1/2) for j = 0 .. count-1"""
    if count < 1:
        raise ValidationError(f"count must be >= 1, got {count}")
    k_l = 2.0 * math.pi / laser_wavelength
    step = 0.5 * math.pi * beam.wavenumber / k_l ** 2
    return [step * (j + 0.5) for j in range(count)]


def lower_bound_delta(beam: ElectronBeam, laser_wavelength: float) -> float:
    """Delta = -(pi/4) k/k_L^2, the offset assumed when only a lower bound on eta0 is sought"""
    k_l = 2.0 * math.pi / laser_wavelength
    return -0.25 * math.pi * beam.wavenumber / k_l ** 2


def measure_fringe_contrast(image: RasterImage, wavevector: Tuple[float, float],
                            center: Tuple[float, float] = (0.0, 0.0),
                            band: Optional[float] = None, margin: float = 0.25) -> float:
    """
    Least-squares amplitude C of -C cos(2 pi q.(x - center)) near the laser axis

    Args:
        image: Normalized Ronchigram
        wavevector: Fringe frequency q on the detector (cycles/m)
        center: Laser focus position on the detector (m)
        band: Half-width (m) of the strip around the laser axis; 4 pixels by default
        margin: Fraction of the field trimmed on each side along the axis
    """

    qx, qy = wavevector
    q = math.hypot(qx, qy)
    if q == 0:
        raise ValidationError("wavevector must be non-zero")
    ux, uy = qx / q, qy / q

    x, y = image.coordinates()
    x = x - center[0]
    y = y - center[1]
    along = x * ux + y * uy
    across = -x * uy + y * ux
    band = 4.0 * image.pixel_size if band is None else band
    half_extent = 0.5 * min(image.width, image.height) * image.pixel_size * (1.0 - 2.0 * margin)

    selected = (np.abs(across) <= band) & (np.abs(along) <= half_extent)
    if np.count_nonzero(selected) < 8:
        raise ValidationError("too few pixels in the measurement strip")

    theta = 2.0 * math.pi * q * along[selected]
    design = np.column_stack([np.ones_like(theta), np.cos(theta), np.sin(theta)])
    coefficients, *_ = np.linalg.lstsq(design, image.values[selected], rcond=None)
    return float(-coefficients[1])
