"""
Tests for services/physics.py
"""

import math

import numpy as np
import pytest
from scipy import signal

from services.errors import ValidationError
from services.physics import (
    electron_beam_from_voltage,
    field_amplitude_from_intensity,
    laser_field_from_intensity,
    laser_field_from_power,
    laser_mode_geometry,
    LaserField,
    peak_phase_from_intensity,
    peak_phase_from_power,
    phase_profile,
    ponderomotive_potential,
)


def test_electron_wavelength_80kv(beam):
    assert beam.wavelength == pytest.approx(4.1757e-12, rel=1e-3)
    assert beam.wavenumber == pytest.approx(2 * math.pi / beam.wavelength)


def test_electron_wavelength_300kv():
    assert electron_beam_from_voltage(300.0).wavelength == pytest.approx(1.9687e-12, rel=1e-3)


def test_electron_speed_below_light():
    beam = electron_beam_from_voltage(300.0)
    assert 0.7 * 299792458.0 < beam.speed < 299792458.0


@pytest.mark.parametrize("voltage", [0.0, -80.0, float("nan")])
def test_invalid_voltage(voltage):
    with pytest.raises(ValidationError):
        electron_beam_from_voltage(voltage)


def test_mode_geometry():
    mode = laser_mode_geometry(1064e-9, 0.026)
    assert mode.waist == pytest.approx(13.03e-6, rel=0.01)
    assert mode.rayleigh_range == pytest.approx(501e-6, rel=0.02)
    assert mode.kappa == pytest.approx(2 / 0.026 ** 2)


@pytest.mark.parametrize("na", [0.0, 0.11, -0.02])
def test_mode_rejects_numerical_aperture(na):
    with pytest.raises(ValidationError):
        laser_mode_geometry(1064e-9, na)


def test_phase_at_antinode_is_peak_phase(mode):
    assert phase_profile(0.0, 0.0, mode) == pytest.approx(mode.peak_phase, rel=1e-12)


def test_phase_vanishes_at_node(mode):
    node = phase_profile(mode.wavelength / 4, 0.0, mode)
    assert abs(node) < 1e-3 * mode.peak_phase


def test_phase_transverse_gaussian(mode):
    edge = phase_profile(0.0, mode.waist, mode)
    assert edge == pytest.approx(mode.peak_phase * math.exp(-2.0), rel=1e-9)


def test_phase_profile_broadcasts(mode):
    x = np.linspace(-1e-6, 1e-6, 7)
    y = np.linspace(-20e-6, 20e-6, 5)[:, None]
    eta = phase_profile(x, y, mode)
    assert eta.shape == (5, 7)
    assert np.all(eta >= 0)
    assert np.all(eta <= mode.peak_phase * (1 + 1e-12))


def test_tilt_reduces_standing_wave_modulation():
    straight = laser_mode_geometry(1064e-9, 0.026, peak_phase=1.0)
    tilted = laser_mode_geometry(1064e-9, 0.026, tilt=0.02, peak_phase=1.0)
    node = straight.wavelength / 4
    assert phase_profile(node, 0.0, tilted) > phase_profile(node, 0.0, straight)
    assert phase_profile(0.0, 0.0, tilted) < phase_profile(0.0, 0.0, straight)


def test_phase_symmetric_across_laser_axis(mode):
    x = np.linspace(-40e-6, 40e-6, 81)
    y = np.linspace(0.0, 30e-6, 31)[:, None]
    assert np.array_equal(phase_profile(x, y, mode), phase_profile(x, -y, mode))


def test_standing_wave_period_is_half_wavelength(mode):
    half = mode.wavelength / 2
    x = np.linspace(0.0, 10 * half, 20001)
    nodes, _ = signal.find_peaks(-phase_profile(x, 0.0, mode))
    assert len(nodes) == 10
    spacing = (x[nodes[-1]] - x[nodes[0]]) / (len(nodes) - 1)
    assert spacing == pytest.approx(half, rel=1e-3)


def test_modulation_falls_with_tilt():
    visibility = []
    for tilt in [0.0, 0.005, 0.01, 0.02, 0.04]:
        mode = laser_mode_geometry(1064e-9, 0.026, tilt=tilt, peak_phase=1.0)
        antinode = phase_profile(0.0, 0.0, mode)
        node = phase_profile(mode.wavelength / 4, 0.0, mode)
        visibility.append((antinode - node) / (antinode + node))
    assert visibility[0] == pytest.approx(1.0, abs=1e-3)
    assert np.all(np.diff(visibility) < 0)
    assert visibility[-1] > 0


def test_field_amplitude():
    assert field_amplitude_from_intensity(4.3e14) == pytest.approx(5.69e8, rel=0.01)


def test_power_for_43_gw_per_cm2():
    mode = laser_mode_geometry(1064e-9, 0.026)
    field = laser_field_from_intensity(mode, 43e13)
    assert field.circulating_power == pytest.approx(28.5e3, rel=0.02)
    assert laser_field_from_power(mode, field.circulating_power).antinode_intensity == pytest.approx(43e13)


def test_inconsistent_laser_field_rejected():
    mode = laser_mode_geometry(1064e-9, 0.026)
    with pytest.raises(ValidationError):
        LaserField(mode, antinode_intensity=1e14, circulating_power=1.0)


def test_peak_phase_at_43_gw_per_cm2(beam):
    mode = laser_mode_geometry(1064e-9, 0.026)
    eta0 = math.degrees(peak_phase_from_intensity(43e13, mode, beam))
    assert 30.0 <= eta0 <= 50.0
    # the simple line-integral model gives about 43 degrees; 38 degrees is the measured value
    assert eta0 == pytest.approx(43.0, abs=2.0)


def test_peak_phase_linear_in_intensity(beam):
    mode = laser_mode_geometry(1064e-9, 0.026)
    single = peak_phase_from_intensity(1e14, mode, beam)
    assert peak_phase_from_intensity(3e14, mode, beam) == pytest.approx(3 * single, rel=1e-12)
    assert peak_phase_from_intensity(0.0, mode, beam) == 0.0


def test_peak_phase_from_power_matches_intensity(beam):
    mode = laser_mode_geometry(1064e-9, 0.026)
    field = laser_field_from_power(mode, 10e3)
    assert peak_phase_from_power(10e3, mode, beam) == pytest.approx(
        peak_phase_from_intensity(field.antinode_intensity, mode, beam)
    )


def test_negative_intensity_rejected(beam):
    mode = laser_mode_geometry(1064e-9, 0.026)
    with pytest.raises(ValidationError):
        peak_phase_from_intensity(-1.0, mode, beam)


def test_ponderomotive_potential():
    energy = ponderomotive_potential(5.69e8, 1064e-9)
    assert energy / 1.602176634e-19 == pytest.approx(4.54e-3, rel=0.02)
    assert ponderomotive_potential(2 * 5.69e8, 1064e-9) == pytest.approx(4 * energy)
    with pytest.raises(ValidationError):
        ponderomotive_potential(1e8, 0.0)
