"""
Tests for services/run_config.py
"""

import json
import math

import pytest

from services.errors import SamplingError, ValidationError
from services.run_config import RunConfig, load_run_config, run_config_from_dict


def test_defaults():
    cfg = load_run_config()
    assert cfg == RunConfig()
    assert cfg.beam().wavelength == pytest.approx(4.1757e-12, rel=1e-3)
    assert math.degrees(cfg.peak_phase()) == pytest.approx(18.0)
    assert cfg.frequency_grid().pixel_size <= 1.593e6
    assert cfg.delta() == pytest.approx(-33.9e-3, rel=0.02)


def test_intensity_overrides_peak_phase():
    cfg = run_config_from_dict({"intensity_gw_cm2": 43.0})
    assert math.degrees(cfg.peak_phase()) == pytest.approx(43.0, abs=2.0)


def test_default_min_frequency_clears_dark_stripe():
    cfg = run_config_from_dict({})
    assert cfg.min_frequency() == pytest.approx(0.603e9, rel=0.01)
    assert run_config_from_dict({"min_frequency_per_nm": 0.5}).min_frequency() == pytest.approx(0.5e9)


def test_defocus_sign():
    assert run_config_from_dict({"defocus_nm": 300.0}).defocus_sign() == 1
    assert run_config_from_dict({"defocus_nm": -300.0}).defocus_sign() == -1


def test_unknown_key_rejected():
    with pytest.raises(ValidationError, match="defocus"):
        run_config_from_dict({"defocus": 1.0})


@pytest.mark.parametrize("values", [
    {"grid_n": 100.5},
    {"grid_n": "large"},
    {"symmetric": 1},
    {"scaling": 3},
    {"defocus_nm": None},
    {"na": float("nan")},
    {"eta0_deg": True},
])
def test_type_errors(values):
    with pytest.raises(ValidationError):
        run_config_from_dict(values)


@pytest.mark.parametrize("values", [
    {"grid_n": 8},
    {"wedge_deg": 90.0},
    {"dose_counts": -1.0},
    {"scan_positions": 7},
    {"scaling": "log"},
    {"na": 0.5},
    {"voltage_kv": 0.0},
    {"delta_mm": 0.0},
    {"crest_count": 1},
    {"power_w": 0.0},
    {"cavity_gain": -1.0},
])
def test_invalid_values(values):
    with pytest.raises(ValidationError):
        run_config_from_dict(values)


def test_coarse_image_pixel_is_a_sampling_error():
    with pytest.raises(SamplingError):
        run_config_from_dict({"grid_n": 256, "image_pixel_nm": 1.0}).validate()


def test_seed_override_wins(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"seed": 4, "grid_n": 256}))
    assert load_run_config(str(path)).seed == 4
    assert load_run_config(str(path), seed=9).seed == 9
    assert load_run_config(str(path), seed=None).seed == 4


def test_json_errors(tmp_path):
    broken = tmp_path / "broken.json"
    broken.write_text("{seed: 1")
    listing = tmp_path / "list.json"
    listing.write_text("[1, 2]")

    with pytest.raises(ValidationError):
        load_run_config(str(broken))
    with pytest.raises(ValidationError):
        load_run_config(str(listing))
    with pytest.raises(ValidationError):
        load_run_config(str(tmp_path / "missing.json"))


def test_to_dict_round_trip():
    cfg = run_config_from_dict({"defocus_nm": -500.0, "seed": 2})
    assert run_config_from_dict(cfg.to_dict()) == cfg
