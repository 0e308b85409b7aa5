"""
Shared fixtures: the 80 kV / 1064 nm / NA 0.026 / f = 20 mm setup
"""

import math

import pytest

from services.ctf_engine import OpticsConfig
from services.physics import electron_beam_from_voltage, laser_mode_geometry

LASER_WAVELENGTH = 1064e-9
FOCAL_LENGTH = 20e-3


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end runs on full-size grids (minutes)")


@pytest.fixture
def beam():
    return electron_beam_from_voltage(80.0)


@pytest.fixture
def mode():
    """Standing wave with 18 degrees at the antinode"""
    return laser_mode_geometry(LASER_WAVELENGTH, 0.026, peak_phase=math.radians(18.0))


@pytest.fixture
def optics():
    return OpticsConfig(focal_length=FOCAL_LENGTH)


@pytest.fixture
def out_dir(tmp_path):
    return tmp_path / "out"
