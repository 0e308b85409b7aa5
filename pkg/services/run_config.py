"""
RunConfig - flat, unit-suffixed run parameters
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, Optional, Union, get_args, get_origin

import config
from services.ctf_engine import OpticsConfig, PlateAlignment, max_frequency_step
from services.detector import CoincidenceParams
from services.errors import SamplingError, ValidationError
from services.physics import (
    ElectronBeam,
    LaserMode,
    electron_beam_from_voltage,
    laser_mode_geometry,
    peak_phase_from_intensity,
)
from services.wave_propagation import GridSpec, RonchigramSetup, lower_bound_delta

logger = logging.getLogger(__name__)

# plate-plane samples per standing-wave fringe when detector_pixel_um is not set
DEFAULT_SAMPLES_PER_FRINGE = 8


@dataclass(frozen=True)
class RunConfig:
    # electron beam and laser
    voltage_kv: float = config.DEFAULT_VOLTAGE_KV
    lambda_l_nm: float = config.DEFAULT_LAMBDA_L_NM
    na: float = config.DEFAULT_NA
    eta0_deg: float = 18.0
    intensity_gw_cm2: Optional[float] = None
    tilt_mrad: float = 0.0
    # input laser power of the measurement and circulating watts per input watt
    power_w: Optional[float] = None
    cavity_gain: Optional[float] = None

    # objective lens
    f_mm: float = config.DEFAULT_F_MM
    defocus_nm: float = 0.0
    cs_mm: float = 0.0
    astig_nm: float = 0.0
    astig_angle_deg: float = 0.0
    envelope_nm: float = config.DEFAULT_ENVELOPE_NM

    # alignment
    transverse_offset_nm: float = 0.0
    lateral_offset_um: float = 0.0
    rotation_deg: float = 0.0

    # Ronchigram
    delta_mm: Optional[float] = None
    magnification: float = 250.0
    detector_pixel_um: Optional[float] = None
    theta_cl: float = 0.0
    dose_counts: float = 0.0
    outer_repetitions: int = config.RONCHIGRAM_OUTER_REPETITIONS
    crest_count: int = 16

    # imaging and analysis
    grid_n: int = config.DEFAULT_GRID
    image_pixel_nm: Optional[float] = None
    phase_rms_rad: float = 0.03
    correlation_nm: float = 0.0
    wedge_deg: float = config.DEFAULT_WEDGE_DEG
    symmetric: bool = True
    scan_positions: int = 16
    scan_periods: float = 1.0
    min_frequency_per_nm: Optional[float] = None
    scaling: str = "minmax"
    seed: int = 0

    # ------------------------------------------------------------------
    # derived objects; constructing them runs each module's validation
    # ------------------------------------------------------------------

    def beam(self) -> ElectronBeam:
        return electron_beam_from_voltage(self.voltage_kv)

    def peak_phase(self) -> float:
        if self.intensity_gw_cm2 is None:
            return math.radians(self.eta0_deg)
        geometry = laser_mode_geometry(self.lambda_l_nm * 1e-9, self.na)
        return peak_phase_from_intensity(self.intensity_gw_cm2 * 1e13, geometry, self.beam())

    def mode(self) -> LaserMode:
        return laser_mode_geometry(self.lambda_l_nm * 1e-9, self.na, self.tilt_mrad * 1e-3, self.peak_phase())

    def optics(self) -> OpticsConfig:
        return OpticsConfig(
            focal_length=self.f_mm * 1e-3,
            defocus=self.defocus_nm * 1e-9,
            spherical_aberration=self.cs_mm * 1e-3,
            envelope_half_max_radius=1.0 / (self.envelope_nm * 1e-9),
            astigmatism=self.astig_nm * 1e-9,
            astigmatism_angle=math.radians(self.astig_angle_deg),
        )

    def alignment(self) -> PlateAlignment:
        return PlateAlignment(
            transverse_offset=self.transverse_offset_nm * 1e-9,
            lateral_offset=self.lateral_offset_um * 1e-6,
            rotation=math.radians(self.rotation_deg) % math.pi,
        )

    def coincidence(self) -> CoincidenceParams:
        return CoincidenceParams(self.theta_cl)

    def delta(self) -> float:
        if self.delta_mm is None:
            return lower_bound_delta(self.beam(), self.lambda_l_nm * 1e-9)
        return self.delta_mm * 1e-3

    def ronchigram_setup(self) -> RonchigramSetup:
        return RonchigramSetup(
            beam=self.beam(),
            mode=self.mode(),
            delta=self.delta(),
            focal_length=self.f_mm * 1e-3,
            magnification=self.magnification,
            rotation=math.radians(self.rotation_deg),
        )

    def ronchigram_grid(self) -> GridSpec:
        setup = self.ronchigram_setup()
        if self.detector_pixel_um is None:
            plate_pixel = self.lambda_l_nm * 1e-9 / (2.0 * DEFAULT_SAMPLES_PER_FRINGE)
            pixel = plate_pixel * setup.detector_scale
        else:
            pixel = self.detector_pixel_um * 1e-6
        return GridSpec(self.grid_n, self.grid_n, pixel)

    def image_pixel(self) -> float:
        """Real-space pixel (m); by default the finest one whose frequency step resolves the standing wave"""
        if self.image_pixel_nm is not None:
            return self.image_pixel_nm * 1e-9
        limit = max_frequency_step(self.mode(), self.beam(), self.f_mm * 1e-3)
        return 1.0 / (self.grid_n * limit * 0.99)

    def frequency_grid(self) -> GridSpec:
        return GridSpec(self.grid_n, self.grid_n, 1.0 / (self.grid_n * self.image_pixel()))

    def defocus_sign(self) -> int:
        return 1 if self.defocus_nm > 0 else -1

    def wedge(self) -> float:
        return math.radians(self.wedge_deg)

    def min_frequency(self) -> float:
        """Lowest frequency used for zero location; default is where the wedge clears the dark stripe"""
        if self.min_frequency_per_nm is not None:
            return self.min_frequency_per_nm * 1e9
        mode, beam = self.mode(), self.beam()
        s0 = mode.waist / (beam.wavelength * self.f_mm * 1e-3)
        return s0 / math.sin(self.wedge()) if self.wedge_deg > 0 else 2.0 * s0

    # ------------------------------------------------------------------

    def validate(self) -> "RunConfig":
        """Builds every derived object so that invalid values fail before any computation"""

        if self.grid_n < 16 or self.grid_n % 2:
            raise ValidationError(f"grid_n must be even and >= 16, got {self.grid_n}")
        if not 0 <= self.wedge_deg < 90:
            raise ValidationError(f"wedge_deg must be in [0, 90), got {self.wedge_deg}")
        if self.dose_counts < 0:
            raise ValidationError(f"dose_counts must be >= 0, got {self.dose_counts}")
        if self.scan_positions < 8:
            raise ValidationError(f"scan_positions must be >= 8, got {self.scan_positions}")
        if self.scan_periods <= 0:
            raise ValidationError(f"scan_periods must be > 0, got {self.scan_periods}")
        if self.scaling not in ("minmax", "percentile"):
            raise ValidationError(f"scaling must be 'minmax' or 'percentile', got {self.scaling!r}")
        if self.phase_rms_rad < 0 or self.correlation_nm < 0:
            raise ValidationError("phase_rms_rad and correlation_nm must be >= 0")
        if self.crest_count < 2:
            raise ValidationError(f"crest_count must be >= 2, got {self.crest_count}")
        if self.outer_repetitions < 1:
            raise ValidationError(f"outer_repetitions must be >= 1, got {self.outer_repetitions}")
        for name in ("power_w", "cavity_gain"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ValidationError(f"{name} must be > 0, got {value}")

        self.mode()
        self.optics()
        self.alignment()
        self.coincidence()
        step = self.frequency_grid().pixel_size
        limit = max_frequency_step(self.mode(), self.beam(), self.f_mm * 1e-3)
        if step > limit:
            raise SamplingError(
                f"image_pixel_nm gives a frequency step of {step:.4g} 1/m; the standing wave needs <= {limit:.4g} 1/m"
            )
        if self.delta() == 0:
            raise ValidationError("delta_mm = 0 is the imaging condition; no Ronchigram forms")
        self.ronchigram_grid()
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, value: Any) -> Any:
    expected = FIELD_TYPES[name]
    optional = get_origin(expected) is Union
    if optional:
        expected = next(arg for arg in get_args(expected) if arg is not type(None))

    if value is None:
        if not optional:
            raise ValidationError(f"{name} may not be null")
        return None
    if expected is bool:
        if not isinstance(value, bool):
            raise ValidationError(f"{name} must be true or false, got {value!r}")
        return value
    if expected is str:
        if not isinstance(value, str):
            raise ValidationError(f"{name} must be a string, got {value!r}")
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"{name} must be a number, got {value!r}")
    if not math.isfinite(value):
        raise ValidationError(f"{name} must be finite, got {value!r}")
    if expected is int:
        if float(value) != int(value):
            raise ValidationError(f"{name} must be an integer, got {value!r}")
        return int(value)
    return float(value)


def run_config_from_dict(values: Dict[str, Any], **overrides) -> RunConfig:
    """Unknown keys and mistyped values raise ValidationError"""

    merged = dict(values)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    unknown = sorted(set(merged) - set(FIELD_TYPES))
    if unknown:
        raise ValidationError(f"unknown config key(s): {', '.join(unknown)}")

    coerced = {name: _coerce(name, value) for name, value in merged.items()}
    return RunConfig(**coerced).validate()


def load_run_config(path: Optional[str] = None, **overrides) -> RunConfig:
    """Reads a flat JSON object; no path means all defaults"""

    values: Dict[str, Any] = {}
    if path is not None:
        try:
            values = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(values, dict):
            raise ValidationError(f"config {path} must be a JSON object")

    run_config = run_config_from_dict(values, **overrides)
    logger.debug(f"Run config: {run_config}")
    return run_config
