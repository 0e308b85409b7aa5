"""
Tests for services/ctf_fit.py

Unit tests run on analytic |CTF|^2 spectra (1024 grid, step 1.5e6 1/m,
defocus -5 um) whose zeros sit at s = sqrt(n / (|DeltaZ| lambda_e)).
"""

import math

import numpy as np
import pandas as pd
import pytest

from services.ctf_engine import OpticsConfig, PlateAlignment, ctf_map
from services.ctf_fit import (
    SLOPE_AGREEMENT,
    CtfFit,
    Ellipse,
    analyze_phase_scan,
    assign_zero_phases,
    correct_astigmatism,
    fit_defocus_polynomial,
    fit_power_slope,
    fit_thon_rings,
    locate_ctf_zeros,
    predicted_power_slope,
    sector_ring_radii,
    slope_difference,
    wrap_half_turn,
)
from services.errors import EstimationError, FitError, ValidationError
from services.physics import laser_mode_geometry, peak_phase_from_power
from services.pipeline import fit_ctf_pipeline
from services.raster import PLANE_FREQUENCY, RasterImage
from services.run_config import run_config_from_dict
from services.wave_propagation import GridSpec

STEP = 1.5e6
GRID = 1024
DEFOCUS = -5e-6
FOCAL_LENGTH = 20e-3


def _spectrum(beam, peak_deg=0.0, astigmatism=0.0, astigmatism_angle=0.0):
    mode = laser_mode_geometry(1064e-9, 0.026, peak_phase=math.radians(peak_deg))
    optics = OpticsConfig(FOCAL_LENGTH, defocus=DEFOCUS, astigmatism=astigmatism,
                          astigmatism_angle=astigmatism_angle)
    ctf = ctf_map(GridSpec(GRID, GRID, STEP), optics, mode, PlateAlignment(), beam)
    return RasterImage(ctf.values ** 2, STEP, PLANE_FREQUENCY)


def _ring_bins(beam, orders):
    return [math.sqrt(n / (abs(DEFOCUS) * beam.wavelength)) / STEP for n in orders]


# ----------------------------------------------------------------------------
# zeros, phases and the polynomial
# ----------------------------------------------------------------------------

def test_locate_zeros_of_chirped_profile():
    s = np.arange(400) * 1e6
    first = 1e8
    profile = pd.DataFrame({"s_per_m": s, "value": np.abs(np.sin(math.pi * (s / first) ** 2))})
    zeros = locate_ctf_zeros(profile, sigma_bins=0, min_frequency=0.5e8)
    expected = first * np.sqrt(np.arange(1, len(zeros) + 1))
    assert len(zeros) >= 10
    assert np.allclose(zeros, expected, atol=0.5e6)


def test_min_frequency_discards_low_zeros():
    s = np.arange(400) * 1e6
    profile = pd.DataFrame({"s_per_m": s, "value": np.abs(np.sin(math.pi * (s / 1e8) ** 2))})
    zeros = locate_ctf_zeros(profile, sigma_bins=0, min_frequency=2.5e8)
    # zeros at 1e8 sqrt(n); n = 7 is the first above 2.5e8
    assert zeros[0] == pytest.approx(1e8 * math.sqrt(7), rel=0.01)


def test_zero_positions_stable_under_white_noise():
    s = np.arange(400) * 1e6
    clean = np.abs(np.sin(math.pi * (s / 1e8) ** 2))
    noise = np.random.Generator(np.random.Philox(8)).normal(0.0, 0.05 * np.ptp(clean), s.size)

    expected = locate_ctf_zeros(pd.DataFrame({"s_per_m": s, "value": clean}), min_frequency=0.5e8, prominence=0.2)
    noisy = locate_ctf_zeros(
        pd.DataFrame({"s_per_m": s, "value": clean + noise}), min_frequency=0.5e8, prominence=0.2
    )

    assert len(noisy) == len(expected)
    assert np.max(np.abs(np.array(noisy) - np.array(expected))) <= 2e6


def test_monotone_profile_has_no_zeros():
    s = np.arange(100) * 1e6
    profile = pd.DataFrame({"s_per_m": s, "value": s / s.max()})
    with pytest.raises(EstimationError):
        locate_ctf_zeros(profile)


def test_assign_zero_phases():
    points = assign_zero_phases([1.0, 2.0, 3.0], -1)
    assert [p for _, p in points] == pytest.approx([-math.pi, -2 * math.pi, -3 * math.pi])
    assert assign_zero_phases([1.0], 1, first_order=4)[0][1] == pytest.approx(4 * math.pi)
    with pytest.raises(ValidationError):
        assign_zero_phases([1.0], 0)


def test_polynomial_recovers_exact_coefficients(beam):
    wavelength = beam.wavelength
    a = -0.5 * math.pi * 1.2e-3 * wavelength ** 3
    b = math.pi * -500e-9 * wavelength
    c = 0.3
    s = np.linspace(0.7e9, 1.5e9, 6)
    fit = fit_defocus_polynomial(list(zip(s, a * s ** 4 + b * s ** 2 + c)), wavelength=wavelength)

    assert fit.quartic_coeff == pytest.approx(a, rel=1e-6)
    assert fit.quadratic_coeff == pytest.approx(b, rel=1e-6)
    assert fit.constant_phase == pytest.approx(c, abs=1e-6)
    assert fit.defocus == pytest.approx(-500e-9, rel=1e-6)
    assert fit.spherical_aberration == pytest.approx(1.2e-3, rel=1e-5)


def test_polynomial_with_fixed_quartic(beam):
    b = math.pi * 300e-9 * beam.wavelength
    a = -1e-36
    s = np.array([0.8e9, 1.0e9, 1.3e9])
    fit = fit_defocus_polynomial(list(zip(s, a * s ** 4 + b * s ** 2 - 0.2)), fixed_quartic=a)
    assert fit.quartic_coeff == a
    assert fit.quadratic_coeff == pytest.approx(b, rel=1e-9)
    assert fit.constant_phase == pytest.approx(-0.2, abs=1e-9)
    assert fit.covariance[0, 0] == 0.0


def test_too_few_zeros_for_free_quartic():
    with pytest.raises(FitError) as excinfo:
        fit_defocus_polynomial([(1e9, -math.pi), (1.2e9, -2 * math.pi)])
    assert excinfo.value.diagnostics == {"zeros": 2, "coefficients": 3}


def test_derived_quantities_need_wavelength():
    fit = CtfFit(quartic_coeff=0.0, quadratic_coeff=1e-17, constant_phase=0.0)
    with pytest.raises(ValidationError):
        fit.defocus


def test_zero_locations_must_increase():
    with pytest.raises(ValidationError):
        CtfFit(0.0, 0.0, 0.0, zero_locations=(2.0, 1.0))


@pytest.mark.parametrize("phase, expected", [
    (math.pi / 2, math.pi / 2),
    (-math.pi / 2, math.pi / 2),
    (0.3 + math.pi, 0.3),
    (-3 * math.pi + 0.1, 0.1),
    (-0.4, -0.4),
])
def test_wrap_half_turn(phase, expected):
    assert wrap_half_turn(phase) == pytest.approx(expected, abs=1e-12)


# ----------------------------------------------------------------------------
# Thon rings on analytic spectra
# ----------------------------------------------------------------------------

def test_thon_fit_recovers_defocus(beam):
    fit = fit_thon_rings(_spectrum(beam), beam, -1, spherical_aberration=0.0,
                         wedge_half_angle=0.0, min_frequency=1e8, correct=False)
    assert fit.defocus == pytest.approx(DEFOCUS, rel=0.005)
    assert abs(math.degrees(fit.constant_phase)) < 1.0
    assert len(fit.zero_locations) >= 8


def test_constant_phase_follows_laser_phase(beam):
    wedge = math.radians(15.0)
    s0 = laser_mode_geometry(1064e-9, 0.026).waist / (beam.wavelength * FOCAL_LENGTH)
    fits = [
        fit_thon_rings(_spectrum(beam, peak), beam, -1, spherical_aberration=0.0,
                       wedge_half_angle=wedge, min_frequency=s0 / math.sin(wedge), correct=False)
        for peak in (0.0, 18.0)
    ]
    shift = math.degrees(fits[1].constant_phase - fits[0].constant_phase)
    assert shift == pytest.approx(18.0, abs=1.0)
    assert fits[1].defocus == pytest.approx(DEFOCUS, rel=0.01)


def test_ellipse_shape_has_unit_geometric_mean():
    ellipse = Ellipse(1.2, 0.4)
    assert ellipse.shape(0.4) * ellipse.shape(0.4 + math.pi / 2) == pytest.approx(1.0)
    assert ellipse.shape(0.4) == pytest.approx(math.sqrt(1.2))
    with pytest.raises(ValidationError):
        Ellipse(0.9)


def test_astigmatism_ratio_and_angle(beam):
    astigmatism = 0.0488 * abs(DEFOCUS)
    spectrum = _spectrum(beam, astigmatism=astigmatism, astigmatism_angle=math.radians(30.0))
    _, ellipse = correct_astigmatism(spectrum, min_frequency=1e8)

    expected = math.sqrt((abs(DEFOCUS) + astigmatism) / (abs(DEFOCUS) - astigmatism))
    assert ellipse.ratio == pytest.approx(expected, abs=0.005)
    assert math.degrees(ellipse.angle) == pytest.approx(30.0, abs=2.0)


def test_correction_circularizes_rings_and_keeps_mean_radius(beam):
    spectrum = _spectrum(beam, astigmatism=0.0488 * abs(DEFOCUS), astigmatism_angle=math.radians(30.0))
    corrected, _ = correct_astigmatism(spectrum, min_frequency=1e8)

    guesses = _ring_bins(beam, [1, 2, 3, 4])
    _, before = sector_ring_radii(spectrum, guesses)
    _, after = sector_ring_radii(corrected, guesses)

    for k in range(len(guesses)):
        assert np.nanmean(after[:, k]) == pytest.approx(np.nanmean(before[:, k]), rel=0.002)
        assert np.nanstd(before[:, k]) / np.nanmean(before[:, k]) > 0.01
        assert np.nanstd(after[:, k]) / np.nanmean(after[:, k]) < 0.005


def test_isotropic_rings_need_no_correction(beam):
    _, ellipse = correct_astigmatism(_spectrum(beam), min_frequency=1e8)
    assert ellipse.ratio == pytest.approx(1.0, abs=0.003)


def test_wedge_drops_sectors(beam):
    guesses = _ring_bins(beam, [1, 2])
    angles, radii = sector_ring_radii(_spectrum(beam), guesses, wedge_half_angle=math.radians(15.0))
    assert len(angles) < 72
    from_axis = np.abs(np.mod(angles + math.pi / 2, math.pi) - math.pi / 2)
    assert np.all(from_axis >= math.radians(15.0))
    assert radii.shape == (len(angles), 2)


def test_correction_needs_power_spectrum():
    image = RasterImage(np.ones((64, 64)), 1e-9)
    with pytest.raises(ValidationError):
        correct_astigmatism(image)


# ----------------------------------------------------------------------------
# phase scan
# ----------------------------------------------------------------------------

def _sinusoidal_scan(count=16, amplitude=math.radians(9.0), period=532e-9):
    positions = np.arange(count) / count * period
    phases = 0.1 + amplitude * np.sin(2 * math.pi * positions / period + 0.4)
    return list(zip(positions, phases))


def test_phase_scan_peak_to_peak_and_period():
    result = analyze_phase_scan(_sinusoidal_scan())
    assert result.peak_to_peak == pytest.approx(2 * math.radians(9.0), abs=1e-6)
    assert result.period == pytest.approx(532e-9, rel=1e-4)


def test_phase_scan_accepts_fits_in_any_order():
    scan = [(p, CtfFit(0.0, 0.0, c)) for p, c in reversed(_sinusoidal_scan())]
    result = analyze_phase_scan(scan)
    assert np.all(np.diff(result.positions) > 0)
    assert result.to_frame().columns.tolist() == ["position_nm", "phase_deg"]


def test_phase_scan_ramp_has_no_period():
    positions = np.linspace(0.0, 500e-9, 12)
    with pytest.raises(EstimationError):
        analyze_phase_scan(list(zip(positions, positions * 1e6)))


def test_phase_scan_needs_eight_positions():
    with pytest.raises(ValidationError):
        analyze_phase_scan(_sinusoidal_scan(count=7))


def test_phase_scan_rejects_repeated_positions():
    scan = _sinusoidal_scan()
    scan[3] = (scan[2][0], scan[3][1])
    with pytest.raises(ValidationError):
        analyze_phase_scan(scan)


# ----------------------------------------------------------------------------
# power dependence
# ----------------------------------------------------------------------------

def test_power_slope_through_origin():
    powers = np.array([1.0, 2.0, 4.0, 4.4])
    slope = fit_power_slope(powers, math.radians(4.1) * powers)
    assert slope.deg_per_watt == pytest.approx(4.1, rel=1e-12)
    assert slope.variance == pytest.approx(0.0, abs=1e-24)


def test_weighted_power_slope_variance():
    powers = np.array([2.0, 4.0])
    slope = fit_power_slope(powers, [0.1, 0.25], phase_errors=[0.01, 0.02])
    weights = np.array([1e4, 2.5e3])
    assert slope.slope == pytest.approx((weights * powers * [0.1, 0.25]).sum() / (weights * powers ** 2).sum())
    assert slope.variance == pytest.approx(1.0 / (weights * powers ** 2).sum())
    assert slope.deg_per_watt_error == pytest.approx(math.degrees(math.sqrt(slope.variance)))


def test_single_unweighted_point_has_no_error():
    slope = fit_power_slope([4.4], [math.radians(18.0)])
    assert slope.deg_per_watt == pytest.approx(18.0 / 4.4)
    assert math.isnan(slope.deg_per_watt_error)


@pytest.mark.parametrize("powers, phases, errors", [
    ([], [], None),
    ([1.0, 2.0], [0.1], None),
    ([0.0, 2.0], [0.1, 0.2], None),
    ([1.0, 2.0], [0.1, float("nan")], None),
    ([1.0, 2.0], [0.1, 0.2], [0.01, 0.0]),
])
def test_power_slope_rejects_input(powers, phases, errors):
    with pytest.raises(ValidationError):
        fit_power_slope(powers, phases, phase_errors=errors)


def test_predicted_slope_scales_with_cavity_gain(mode, beam):
    per_watt = predicted_power_slope(mode, beam, 6500.0)
    assert per_watt * 4.4 == pytest.approx(peak_phase_from_power(6500.0 * 4.4, mode, beam), rel=1e-12)
    with pytest.raises(ValidationError):
        predicted_power_slope(mode, beam, 0.0)


def test_slope_difference():
    assert slope_difference(4.1, 5.1) == pytest.approx(1.0 / 5.1)
    assert slope_difference(4.1, 5.1) <= SLOPE_AGREEMENT
    assert slope_difference(0.0, 0.0) == 0.0
    assert slope_difference(2.0, 4.0) > SLOPE_AGREEMENT


# ----------------------------------------------------------------------------
# end to end
# ----------------------------------------------------------------------------

@pytest.mark.slow
def test_thon_pipeline_on_noisy_astigmatic_micrograph(out_dir):
    cfg = run_config_from_dict({
        "defocus_nm": -500.0,
        "astig_nm": 0.0488 * 500.0,
        "astig_angle_deg": 30.0,
        "eta0_deg": 18.0,
        "dose_counts": 1000.0,
        "phase_rms_rad": 0.05,
        "seed": 5,
    })
    result = fit_ctf_pipeline(cfg, out_dir)

    assert result["success"], result.get("error")
    summary = result["summary"]
    assert summary["defocus"][0] == pytest.approx(-500.0, rel=0.03)
    assert summary["constant_phase"][0] == pytest.approx(18.0, abs=1.5)
    assert summary["astigmatism_ratio"] == pytest.approx(1.05, abs=0.02)
