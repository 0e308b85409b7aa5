"""
One pipeline per CLI subcommand

Every pipeline computes all of its results before the first file is
written, then writes the outputs and the run manifest into a staging
directory that is moved into place once every file is written. Pipelines
return result dictionaries; failures are reported in them with the exit
code the CLI should use.
"""

import functools
import logging
import math
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional

import numpy as np
import pandas as pd

from services.ctf_engine import (
    ctf_map,
    dark_stripe_half_width,
    misalignment_signature,
    plateau_levels,
    power_spectrum,
    random_phase_object,
    rms_angular_average,
    simulate_weak_phase_image,
    stripe_frequency,
)
from services.ctf_fit import (
    SLOPE_AGREEMENT,
    CtfFit,
    analyze_phase_scan,
    fit_power_slope,
    fit_thon_rings,
    predicted_power_slope,
    slope_difference,
)
from services.detector import expose
from services.errors import EstimationError, LppError, ValidationError
from services.raster import PLANE_FREQUENCY, RasterImage
from services.raster_io import read_raster, staged_directory, write_raster
from services.reports import (
    export_profile,
    export_raster_csv,
    export_table_csv,
    export_table_xlsx,
    read_scan_csv,
    render_image,
    write_manifest,
    write_report,
)
from services.ronchigram_fit import RonchigramHints, crest_trough_profiles, fit_ronchigram
from services.run_config import RunConfig
from services.wave_propagation import (
    analytic_fringe_contrast,
    exact_fringe_contrast,
    measure_fringe_contrast,
    predicted_detector_wavevector,
    synthesize_ronchigram,
)

logger = logging.getLogger(__name__)

FORMATS = ("raster", "csv", "png")
RASTER_SUFFIX = {"raster": ".lpp", "csv": ".csv", "png": ".png"}

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_VALIDATION = 2


# ============================================================================
# OUTPUT BUNDLE
# ============================================================================

class Outputs:
    """Results queued for writing once the computation has finished"""

    def __init__(self):
        self.rasters: Dict[str, RasterImage] = {}
        self.profiles: Dict[str, pd.DataFrame] = {}
        self.tables: Dict[str, pd.DataFrame] = {}
        self.reports: Dict[str, Mapping[str, Any]] = {}
        self.workbooks: Dict[str, Mapping[str, pd.DataFrame]] = {}

    def write(self, out_dir: Path, fmt: str, scaling: str) -> List[Path]:
        written = []
        for name, image in self.rasters.items():
            path = out_dir / f"{name}{RASTER_SUFFIX[fmt]}"
            if fmt == "raster":
                write_raster(image, path)
            elif fmt == "csv":
                export_raster_csv(image, path)
            else:
                render_image(image, path, scaling)
            written.append(path)
        for name, frame in self.profiles.items():
            written.append(export_profile(frame, out_dir / f"{name}.csv"))
        for name, frame in self.tables.items():
            written.append(export_table_csv(frame, out_dir / f"{name}.csv"))
        for name, entries in self.reports.items():
            written.append(write_report(entries, out_dir / f"{name}.txt"))
        for name, frames in self.workbooks.items():
            written.append(export_table_xlsx(frames, out_dir / f"{name}.xlsx"))
        return written


def pipeline(command: str):
    """
    Wraps a pipeline body: runs it, writes its outputs and the manifest,
    and turns library errors into result dictionaries
    """

    def decorator(body: Callable[[RunConfig, Optional[str]], Outputs]):
        @functools.wraps(body)
        def run(run_config: RunConfig, out_dir, fmt: str = "raster",
                input_path: Optional[str] = None) -> Dict[str, Any]:
            try:
                if fmt not in FORMATS:
                    raise ValidationError(f"format must be one of {', '.join(FORMATS)}, got {fmt!r}")
                logger.info(f"Running {command}")
                outputs = body(run_config, input_path)

                out_dir = Path(out_dir)
                with staged_directory(out_dir) as staging:
                    staged = outputs.write(staging, fmt, run_config.scaling)
                    write_manifest(staging, run_config.to_dict(), staged, command=command)
                written = [out_dir / path.name for path in staged]
                manifest = out_dir / "manifest.json"
                logger.info(f"{command}: {len(written)} output(s) in {out_dir}")
                return {
                    "success": True,
                    "command": command,
                    "outputs": [str(p) for p in written],
                    "manifest": str(manifest),
                    "summary": {k: v for report in outputs.reports.values() for k, v in report.items()},
                    "exit_code": EXIT_OK,
                }
            except ValidationError as exc:
                logger.error(f"{command}: {exc}")
                return {"success": False, "command": command, "error": str(exc), "exit_code": EXIT_VALIDATION}
            except LppError as exc:
                logger.error(f"{command}: {exc}")
                return {"success": False, "command": command, "error": str(exc), "exit_code": EXIT_RUNTIME}

        run.command = command
        return run

    return decorator


# ============================================================================
# SHARED STEPS
# ============================================================================

def _phase_object(cfg: RunConfig) -> RasterImage:
    return random_phase_object(
        cfg.grid_n, cfg.image_pixel(), cfg.phase_rms_rad, cfg.correlation_nm * 1e-9, cfg.seed
    )


def _micrograph(cfg: RunConfig, phase_object: RasterImage, align=None, seed: Optional[int] = None) -> RasterImage:
    """Weak-phase image of phase_object, exposed when dose_counts > 0"""

    ctf = ctf_map(cfg.frequency_grid(), cfg.optics(), cfg.mode(), align or cfg.alignment(),
                  cfg.beam(), cfg.symmetric)
    image = simulate_weak_phase_image(phase_object, ctf)
    if cfg.dose_counts > 0:
        image = expose(image, cfg.dose_counts, cfg.coincidence(), cfg.seed + 1 if seed is None else seed)
    return image


def _thon_fit(cfg: RunConfig, source: RasterImage) -> CtfFit:
    return fit_thon_rings(
        source,
        cfg.beam(),
        cfg.defocus_sign(),
        spherical_aberration=cfg.cs_mm * 1e-3,
        wedge_half_angle=cfg.wedge(),
        axis_angle=cfg.alignment().rotation,
        min_frequency=cfg.min_frequency(),
    )


def _require_input(command: str, input_path: Optional[str]) -> str:
    if input_path is None:
        raise ValidationError(f"{command} needs --input")
    if not Path(input_path).exists():
        raise ValidationError(f"input {input_path} does not exist")
    return input_path


def _power_entries(cfg: RunConfig, peak_phase: float) -> Dict[str, Any]:
    """Degrees per input watt, and the predicted slope when cavity_gain is set"""

    if cfg.power_w is None:
        return {}
    measured = fit_power_slope([cfg.power_w], [peak_phase])
    entries: Dict[str, Any] = {
        "power": (cfg.power_w, "W"),
        "deg_per_watt": (measured.deg_per_watt, "deg/W"),
    }
    if cfg.cavity_gain is not None:
        predicted = predicted_power_slope(cfg.mode(), cfg.beam(), cfg.cavity_gain)
        difference = slope_difference(measured.slope, predicted)
        entries["predicted_deg_per_watt"] = (math.degrees(predicted), "deg/W")
        entries["deg_per_watt_difference"] = difference
        if difference > SLOPE_AGREEMENT:
            logger.warning(f"Measured {measured.deg_per_watt:.2f} deg/W differs from the predicted "
                           f"{math.degrees(predicted):.2f} deg/W by {difference:.0%}")
    return entries


def _entry_rows(entries: Mapping[str, Any]) -> list:
    """(name, value, unit) rows for a summary sheet"""
    return [(name, *(value if isinstance(value, tuple) else (value, ""))) for name, value in entries.items()]


# ============================================================================
# SUBCOMMANDS
# ============================================================================

@pipeline("simulate-ronchigram")
def simulate_ronchigram_pipeline(cfg: RunConfig, input_path: Optional[str]) -> Outputs:
    setup = cfg.ronchigram_setup()
    grid = cfg.ronchigram_grid()
    intensity = synthesize_ronchigram(setup, grid)

    wavevector = predicted_detector_wavevector(setup)
    mode, beam = setup.mode, setup.beam
    report = {
        "eta0": (math.degrees(mode.peak_phase), "deg"),
        "delta": (setup.delta * 1e3, "mm"),
        "detector_pixel": (grid.pixel_size * 1e6, "um"),
        "fringe_period": (1e6 / math.hypot(*wavevector), "um"),
        "contrast_measured": measure_fringe_contrast(intensity, wavevector, setup.laser_center),
        "contrast_exact": exact_fringe_contrast(mode.peak_phase, setup.delta, beam.wavenumber, mode.wavevector),
    }
    if mode.peak_phase < math.pi:
        report["contrast_two_term"] = analytic_fringe_contrast(
            mode.peak_phase, setup.delta, beam.wavenumber, mode.wavevector
        )

    image = intensity
    if cfg.dose_counts > 0:
        image = expose(intensity, cfg.dose_counts, cfg.coincidence(), cfg.seed)
        report["dose"] = (cfg.dose_counts, "counts/pixel")

    outputs = Outputs()
    outputs.rasters["ronchigram"] = image
    outputs.reports["ronchigram"] = report
    return outputs


@pipeline("simulate-image")
def simulate_image_pipeline(cfg: RunConfig, input_path: Optional[str]) -> Outputs:
    phase_object = _phase_object(cfg)
    image = _micrograph(cfg, phase_object)

    outputs = Outputs()
    outputs.rasters["image"] = image
    outputs.rasters["phase_object"] = phase_object
    outputs.reports["image"] = {
        "pixel_size": (phase_object.pixel_size * 1e9, "nm"),
        "nyquist": (0.5e-9 / phase_object.pixel_size, "1/nm"),
        "phase_rms": (float(np.std(phase_object.values)), "rad"),
        "eta0": (math.degrees(cfg.peak_phase()), "deg"),
        "defocus": (cfg.defocus_nm, "nm"),
    }
    return outputs


@pipeline("ctf-map")
def ctf_map_pipeline(cfg: RunConfig, input_path: Optional[str]) -> Outputs:
    optics, mode, beam, align = cfg.optics(), cfg.mode(), cfg.beam(), cfg.alignment()
    ctf = ctf_map(cfg.frequency_grid(), optics, mode, align, beam, cfg.symmetric)
    profile = rms_angular_average(ctf, cfg.wedge())

    eta_origin = ctf.metadata["eta_origin"]
    report = {
        "eta_origin": (math.degrees(eta_origin), "deg"),
        "sin_eta_origin": math.sin(eta_origin),
        "frequency_step": (ctf.frequency_step * 1e-9, "1/nm"),
        "stripe_frequency": (stripe_frequency(mode, beam, optics.focal_length) * 1e-9, "1/nm"),
        "symmetric": cfg.symmetric,
    }

    try:
        first, second = plateau_levels(profile, mode, beam, optics.focal_length, optics)
        report["first_plateau"] = first
        report["second_plateau"] = second
    except ValidationError as exc:
        logger.warning(f"Plateaus not reported: {exc}")

    try:
        report["dark_stripe_half_width"] = (dark_stripe_half_width(ctf, optics) * 1e-9, "1/nm")
    except EstimationError as exc:
        logger.warning(f"Dark stripe not reported: {exc}")

    if not align.centered:
        signature = misalignment_signature(align, mode, beam, optics.focal_length)
        report["phase_stripes"] = signature.count
        report["phase_stripe_centers"] = ([c * 1e-9 for c in signature.centers], "1/nm")

    outputs = Outputs()
    outputs.rasters["ctf_map"] = ctf.to_raster("real")
    outputs.profiles["rms_profile"] = profile[["s_per_m", "value"]]
    outputs.reports["ctf_map"] = report
    return outputs


@pipeline("rms-profile")
def rms_profile_pipeline(cfg: RunConfig, input_path: Optional[str]) -> Outputs:
    """Angular RMS of an input raster, or of the configured CTF map without --input"""

    if input_path is None:
        source = ctf_map(cfg.frequency_grid(), cfg.optics(), cfg.mode(), cfg.alignment(),
                         cfg.beam(), cfg.symmetric)
    else:
        raster = read_raster(_require_input("rms-profile", input_path))
        source = raster if raster.plane == PLANE_FREQUENCY else power_spectrum(raster)

    profile = rms_angular_average(source, cfg.wedge(), cfg.alignment().rotation)

    outputs = Outputs()
    outputs.profiles["rms_profile"] = profile[["s_per_m", "value"]]
    return outputs


@pipeline("fit-ronchigram")
def fit_ronchigram_pipeline(cfg: RunConfig, input_path: Optional[str]) -> Outputs:
    image = read_raster(_require_input("fit-ronchigram", input_path))
    hints = RonchigramHints(
        beam=cfg.beam(),
        laser_wavelength=cfg.lambda_l_nm * 1e-9,
        focal_length=cfg.f_mm * 1e-3,
        magnification=cfg.magnification,
        delta=cfg.delta(),
        numerical_aperture=cfg.na,
        theta=cfg.theta_cl,
        outer_repetitions=cfg.outer_repetitions,
    )

    fit = fit_ronchigram(image, hints)
    profiles = crest_trough_profiles(image, fit, cfg.crest_count)

    report = {
        "eta0": (math.degrees(fit.peak_phase), "deg"),
        "na": fit.numerical_aperture,
        "theta_cl": fit.theta_cl,
        "dose": (fit.dose, "counts/pixel"),
        "residual_norm": fit.residual_norm,
        "center": (list(fit.center), "px"),
        "rotation": (math.degrees(fit.rotation), "deg"),
        "fringe_period": (fit.fringe_period * 1e6, "um"),
        "magnification": fit.magnification,
        "dead_pixels": fit.dead_pixels,
        "objective_history": list(fit.objective_history),
    }
    power = _power_entries(cfg, fit.peak_phase)
    report.update(power)
    summary = pd.DataFrame(
        [
            ("eta0", math.degrees(fit.peak_phase), "deg"),
            ("na", fit.numerical_aperture, ""),
            ("theta_cl", fit.theta_cl, ""),
            ("dose", fit.dose, "counts/pixel"),
            ("residual_norm", fit.residual_norm, ""),
            ("fringe_period", fit.fringe_period * 1e6, "um"),
            ("magnification", fit.magnification, ""),
            *_entry_rows(power),
        ],
        columns=["parameter", "value", "unit"],
    )

    outputs = Outputs()
    if fit.model is not None:
        outputs.rasters["ronchigram_model"] = fit.model
    outputs.profiles["crest_trough"] = profiles
    outputs.reports["ronchigram_fit"] = report
    outputs.workbooks["ronchigram_fit"] = {"fit": summary, "profiles": profiles}
    return outputs


@pipeline("fit-ctf")
def fit_ctf_pipeline(cfg: RunConfig, input_path: Optional[str]) -> Outputs:
    """Thon-ring fit of an input micrograph, or of one simulated from the config"""

    if input_path is None:
        source = _micrograph(cfg, _phase_object(cfg))
    else:
        source = read_raster(_require_input("fit-ctf", input_path))

    fit = _thon_fit(cfg, source)
    spectrum = source if source.plane == PLANE_FREQUENCY else power_spectrum(source)
    profile = rms_angular_average(spectrum, cfg.wedge(), cfg.alignment().rotation)

    defocus_std = math.sqrt(max(fit.covariance[1, 1], 0.0)) / (math.pi * fit.wavelength)
    report = {
        "defocus": (fit.defocus * 1e9, "nm"),
        "defocus_std": (defocus_std * 1e9, "nm"),
        "spherical_aberration": (fit.spherical_aberration * 1e3, "mm"),
        "constant_phase": (math.degrees(fit.constant_phase), "deg"),
        "astigmatism_ratio": fit.ellipse.ratio,
        "astigmatism_angle": (math.degrees(fit.ellipse.angle), "deg"),
        "zero_count": len(fit.zero_locations),
        "zeros": ([s * 1e-9 for s in fit.zero_locations], "1/nm"),
    }
    zeros = pd.DataFrame({
        "s_per_nm": np.asarray(fit.zero_locations) * 1e-9,
        "phase_rad": np.asarray(fit.zero_phases),
    })

    outputs = Outputs()
    outputs.profiles["thon_profile"] = profile[["s_per_m", "value"]]
    outputs.reports["ctf_fit"] = report
    outputs.workbooks["ctf_fit"] = {"zeros": zeros, "profile": profile.assign(s_per_nm=profile["s_per_m"] * 1e-9)}
    return outputs


def synthesize_phase_scan(cfg: RunConfig) -> list:
    """
    Constant phases of Thon fits at evenly spaced beam positions along the
    laser axis, all imaging the same phase object
    """

    period = cfg.lambda_l_nm * 1e-9 / 2.0
    positions = np.arange(cfg.scan_positions) / cfg.scan_positions * cfg.scan_periods * period
    phase_object = _phase_object(cfg)
    base = cfg.alignment()

    scan = []
    for index, position in enumerate(positions):
        align = replace(base, transverse_offset=base.transverse_offset + float(position))
        image = _micrograph(cfg, phase_object, align, seed=cfg.seed + 1 + index)
        fit = _thon_fit(cfg, image)
        logger.info(f"Scan {index + 1}/{len(positions)}: {position * 1e9:.1f} nm -> "
                    f"{math.degrees(fit.constant_phase):.2f} deg")
        scan.append((float(position), fit))
    return scan


@pipeline("scan-analyze")
def scan_analyze_pipeline(cfg: RunConfig, input_path: Optional[str]) -> Outputs:
    if input_path is None:
        scan = synthesize_phase_scan(cfg)
    else:
        scan = read_scan_csv(_require_input("scan-analyze", input_path))

    result = analyze_phase_scan(scan)
    report = {
        "peak_to_peak": (math.degrees(result.peak_to_peak), "deg"),
        "period": (result.period * 1e9, "nm"),
        "positions": len(result.positions),
    }
    # the scan swings between node and antinode, so its peak-to-peak is eta0
    power = _power_entries(cfg, result.peak_to_peak)
    report.update(power)

    table = result.to_frame()
    outputs = Outputs()
    outputs.tables["phase_scan"] = table
    outputs.reports["phase_scan"] = report
    outputs.workbooks["phase_scan"] = {"scan": table, "summary": pd.DataFrame(
        [
            ("peak_to_peak", report["peak_to_peak"][0], "deg"),
            ("period", report["period"][0], "nm"),
            *_entry_rows(power),
        ],
        columns=["parameter", "value", "unit"],
    )}
    return outputs


PIPELINES = {
    run.command: run
    for run in (
        simulate_ronchigram_pipeline,
        simulate_image_pipeline,
        ctf_map_pipeline,
        rms_profile_pipeline,
        fit_ronchigram_pipeline,
        fit_ctf_pipeline,
        scan_analyze_pipeline,
    )
}
