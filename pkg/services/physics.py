"""
Physical constants, electron-beam kinematics, Gaussian-mode geometry and
the laser-induced electron phase profile

All quantities are SI. Intensities are standing-wave antinode intensities;
the traveling-wave-equivalent field entering the ponderomotive potential is
E^2 = 2 I / (eps0 c).
"""

import math
from dataclasses import dataclass

import numpy as np

from services.errors import ValidationError

# ============================================================================
# CODATA 2018
# ============================================================================

SPEED_OF_LIGHT = 299792458.0                 # m/s (exact)
PLANCK = 6.62607015e-34                      # J s (exact)
HBAR = PLANCK / (2.0 * math.pi)
ELEMENTARY_CHARGE = 1.602176634e-19          # C (exact)
ELECTRON_MASS = 9.1093837015e-31             # kg
VACUUM_PERMITTIVITY = 8.8541878128e-12       # F/m
ELECTRON_REST_ENERGY = ELECTRON_MASS * SPEED_OF_LIGHT ** 2

# Paraxial validity guard for the cavity mode
MAX_NUMERICAL_APERTURE = 0.1


# ============================================================================
# ELECTRON BEAM
# ============================================================================

@dataclass(frozen=True)
class ElectronBeam:
    voltage: float       # kV
    wavelength: float    # m
    wavenumber: float    # rad/m
    speed: float         # m/s

    @property
    def kinetic_energy(self) -> float:
        return ELEMENTARY_CHARGE * self.voltage * 1e3


def electron_beam_from_voltage(voltage: float) -> ElectronBeam:
    """
    Relativistic de Broglie wavelength and speed for an accelerating voltage

    Args:
        voltage: Accelerating voltage in kilovolts

    Returns:
        ElectronBeam with wavelength = h c / sqrt(E (E + 2 m c^2))
    """

    if not np.isfinite(voltage) or voltage <= 0:
        raise ValidationError(f"voltage must be > 0 kV, got {voltage}")

    energy = ELEMENTARY_CHARGE * voltage * 1e3
    wavelength = PLANCK * SPEED_OF_LIGHT / math.sqrt(energy * (energy + 2.0 * ELECTRON_REST_ENERGY))
    gamma = 1.0 + energy / ELECTRON_REST_ENERGY
    speed = SPEED_OF_LIGHT * math.sqrt(1.0 - 1.0 / gamma ** 2)

    return ElectronBeam(
        voltage=float(voltage),
        wavelength=wavelength,
        wavenumber=2.0 * math.pi / wavelength,
        speed=speed,
    )


# ============================================================================
# GAUSSIAN STANDING-WAVE MODE
# ============================================================================

@dataclass(frozen=True)
class LaserMode:
    """Standing-wave Gaussian cavity mode; geometry is derived from NA"""

    wavelength: float
    numerical_aperture: float
    tilt: float = 0.0
    peak_phase: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.wavelength) or self.wavelength <= 0:
            raise ValidationError(f"laser wavelength must be > 0, got {self.wavelength}")
        if not 0 < self.numerical_aperture <= MAX_NUMERICAL_APERTURE:
            raise ValidationError(
                f"numerical aperture must be in (0, {MAX_NUMERICAL_APERTURE}], "
                f"got {self.numerical_aperture}"
            )
        if not np.isfinite(self.peak_phase) or self.peak_phase < 0:
            raise ValidationError(f"peak phase must be >= 0, got {self.peak_phase}")
        if not np.isfinite(self.tilt):
            raise ValidationError(f"tilt must be finite, got {self.tilt}")

    @property
    def waist(self) -> float:
        return self.wavelength / (math.pi * self.numerical_aperture)

    @property
    def rayleigh_range(self) -> float:
        return self.wavelength / (math.pi * self.numerical_aperture ** 2)

    @property
    def kappa(self) -> float:
        return 2.0 / self.numerical_aperture ** 2

    @property
    def wavevector(self) -> float:
        """k_L = 2 pi / lambda_L"""
        return 2.0 * math.pi / self.wavelength


def laser_mode_geometry(wavelength: float, numerical_aperture: float,
                        tilt: float = 0.0, peak_phase: float = 0.0) -> LaserMode:
    return LaserMode(
        wavelength=float(wavelength),
        numerical_aperture=float(numerical_aperture),
        tilt=float(tilt),
        peak_phase=float(peak_phase),
    )


def phase_profile(x, y, mode: LaserMode):
    """
    Laser-induced electron phase eta(x, y) for a standing wave whose axis lies
    along x and crosses the electron beam at pi/2 - tilt

    Args:
        x: Position along the laser axis (m), scalar or array
        y: Position transverse to the laser axis (m), scalar or array
        mode: Cavity mode (peak_phase is the phase at the origin for zero tilt)

    Returns:
        Phase in radians, broadcast over x and y
    """

    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)

    X = x / mode.rayleigh_range
    Y = y / mode.waist
    one_x2 = 1.0 + X * X
    kappa = mode.kappa

    envelope = 0.5 * np.exp(-2.0 * Y * Y / one_x2) / np.sqrt(one_x2)
    damping = np.exp(-mode.tilt ** 2 * kappa * one_x2) * one_x2 ** -0.25
    argument = 2.0 * X / one_x2 * Y * Y + 2.0 * kappa * X - 1.5 * np.arctan(X)

    return mode.peak_phase * envelope * (1.0 + damping * np.cos(argument))


# ============================================================================
# LASER FIELD AND PONDEROMOTIVE PHASE
# ============================================================================

@dataclass(frozen=True)
class LaserField:
    """
    Intensity bookkeeping for the standing wave

    Two counter-propagating beams of power P add in field at an antinode, so
    I_antinode = 4 * 2P / (pi w0^2).
    """

    mode: LaserMode
    antinode_intensity: float
    circulating_power: float

    def __post_init__(self):
        if self.antinode_intensity < 0 or self.circulating_power < 0:
            raise ValidationError("intensity and circulating power must be >= 0")
        expected = antinode_intensity_from_power(self.circulating_power, self.mode)
        if not math.isclose(expected, self.antinode_intensity, rel_tol=1e-9, abs_tol=1e-30):
            raise ValidationError(
                f"antinode intensity {self.antinode_intensity:.6g} W/m^2 is inconsistent "
                f"with circulating power {self.circulating_power:.6g} W "
                f"(expected {expected:.6g} W/m^2)"
            )


def antinode_intensity_from_power(circulating_power: float, mode: LaserMode) -> float:
    return 8.0 * circulating_power / (math.pi * mode.waist ** 2)


def laser_field_from_power(mode: LaserMode, circulating_power: float) -> LaserField:
    return LaserField(mode, antinode_intensity_from_power(circulating_power, mode), circulating_power)


def laser_field_from_intensity(mode: LaserMode, antinode_intensity: float) -> LaserField:
    power = antinode_intensity * math.pi * mode.waist ** 2 / 8.0
    return LaserField(mode, antinode_intensity_from_power(power, mode), power)


def field_amplitude_from_intensity(antinode_intensity: float) -> float:
    """Traveling-wave-equivalent field amplitude, E = sqrt(2 I / (eps0 c))"""
    if antinode_intensity < 0:
        raise ValidationError(f"intensity must be >= 0, got {antinode_intensity}")
    return math.sqrt(2.0 * antinode_intensity / (VACUUM_PERMITTIVITY * SPEED_OF_LIGHT))


def ponderomotive_potential(field_amplitude: float, wavelength: float) -> float:
    """U = e^2 E^2 lambda_L^2 / (16 pi^2 m c^2), in joules"""
    if field_amplitude < 0 or wavelength <= 0:
        raise ValidationError("field amplitude must be >= 0 and wavelength > 0")
    return (ELEMENTARY_CHARGE ** 2 * field_amplitude ** 2 * wavelength ** 2
            / (16.0 * math.pi ** 2 * ELECTRON_MASS * SPEED_OF_LIGHT ** 2))


def peak_phase_from_intensity(antinode_intensity: float, mode: LaserMode, beam: ElectronBeam) -> float:
    """
    Phase at the antinode from the line integral of U across the Gaussian
    transverse profile, eta0 = U w0 sqrt(pi/2) / (hbar v)

    No relativistic correction beyond the electron speed is applied; at
    43 GW/cm^2, 80 kV and w0 = 13 um this gives about 43 degrees.
    """

    if antinode_intensity < 0:
        raise ValidationError(f"intensity must be >= 0, got {antinode_intensity}")

    # U is quadratic in E and E^2 is linear in I, so the factorization keeps
    # eta0 exactly linear in I
    u_per_intensity = ponderomotive_potential(field_amplitude_from_intensity(1.0), mode.wavelength)
    path = mode.waist * math.sqrt(math.pi / 2.0)
    return antinode_intensity * u_per_intensity * path / (HBAR * beam.speed)


def peak_phase_from_power(circulating_power: float, mode: LaserMode, beam: ElectronBeam) -> float:
    return peak_phase_from_intensity(antinode_intensity_from_power(circulating_power, mode), mode, beam)
