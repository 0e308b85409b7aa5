"""
CLI and pipeline tests: exit codes, outputs and the run manifest
"""

import json
import math

import numpy as np
import pandas as pd
import pytest

from app import build_parser, run_command
from services.pipeline import (
    PIPELINES,
    Outputs,
    ctf_map_pipeline,
    fit_ronchigram_pipeline,
    pipeline,
    scan_analyze_pipeline,
    simulate_ronchigram_pipeline,
)
from services.physics import peak_phase_from_power
from services.reports import read_report
from services.run_config import run_config_from_dict

SMALL = {"grid_n": 256}


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps(SMALL))
    return str(path)


def _manifest(out_dir):
    return json.loads((out_dir / "manifest.json").read_text())


def test_every_pipeline_has_a_subcommand():
    parser = build_parser()
    for name in PIPELINES:
        assert parser.parse_args([name]).command == name


def test_unknown_flag_is_exit_2(out_dir):
    assert run_command(["ctf-map", "--bogus", "--out", str(out_dir)]) == 2
    assert not out_dir.exists()


def test_missing_subcommand_is_exit_2():
    assert run_command([]) == 2


def test_ctf_map_outputs(small_config, out_dir):
    assert run_command(["ctf-map", "--config", small_config, "--out", str(out_dir)]) == 0

    names = {p.name for p in out_dir.iterdir()}
    assert {"ctf_map.lpp", "rms_profile.csv", "ctf_map.txt", "manifest.json"} <= names

    manifest = _manifest(out_dir)
    assert manifest["command"] == "ctf-map"
    assert manifest["config"]["grid_n"] == 256
    assert set(manifest["outputs"]) == names - {"manifest.json"}

    report = read_report(out_dir / "ctf_map.txt")
    assert float(report["eta_origin"]) == pytest.approx(18.0)
    assert float(report["stripe_frequency"]) == pytest.approx(0.156, rel=0.01)


def test_png_format(small_config, out_dir):
    assert run_command(["ctf-map", "--config", small_config, "--out", str(out_dir), "--format", "png"]) == 0
    assert (out_dir / "ctf_map.png").read_bytes()[:4] == b"\x89PNG"


def test_same_seed_same_outputs(small_config, tmp_path):
    runs = []
    for name, seed in (("a", "3"), ("b", "3"), ("c", "4")):
        out = tmp_path / name
        assert run_command(["simulate-image", "--config", small_config, "--seed", seed, "--out", str(out)]) == 0
        runs.append(_manifest(out)["outputs"])

    assert runs[0] == runs[1]
    assert runs[0]["image.lpp"] != runs[2]["image.lpp"]


def test_invalid_config_is_exit_2_without_outputs(tmp_path, out_dir):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"grid_n": 256, "wedge_deg": 95.0}))
    assert run_command(["ctf-map", "--config", str(path), "--out", str(out_dir)]) == 2
    assert not out_dir.exists()


def test_unknown_config_key_is_exit_2(tmp_path, out_dir):
    path = tmp_path / "typo.json"
    path.write_text(json.dumps({"defocus": -500}))
    assert run_command(["ctf-map", "--config", str(path), "--out", str(out_dir)]) == 2


def test_fit_ronchigram_needs_input(small_config, out_dir):
    assert run_command(["fit-ronchigram", "--config", small_config, "--out", str(out_dir)]) == 2
    result = fit_ronchigram_pipeline(run_config_from_dict(SMALL), out_dir)
    assert not result["success"] and result["exit_code"] == 2
    assert "--input" in result["error"]


def test_unreadable_input_is_exit_1(small_config, tmp_path, out_dir):
    garbage = tmp_path / "garbage.lpp"
    garbage.write_bytes(b"not a raster at all, just text" * 4)
    assert run_command(["fit-ctf", "--config", small_config, "--input", str(garbage), "--out", str(out_dir)]) == 1


def test_pipeline_rejects_unknown_format(out_dir):
    result = ctf_map_pipeline(run_config_from_dict(SMALL), out_dir, fmt="tiff")
    assert result["exit_code"] == 2


def test_simulate_ronchigram_round_trips_through_rms_profile(small_config, tmp_path):
    first = tmp_path / "ronchigram"
    assert run_command(["simulate-ronchigram", "--config", small_config, "--out", str(first)]) == 0
    report = read_report(first / "ronchigram.txt")
    assert float(report["contrast_measured"]) == pytest.approx(float(report["contrast_exact"]), rel=0.05)

    second = tmp_path / "profile"
    assert run_command(["rms-profile", "--config", small_config, "--input", str(first / "ronchigram.lpp"),
                        "--out", str(second)]) == 0
    profile = pd.read_csv(second / "rms_profile.csv")
    assert profile.columns.tolist() == ["s_per_nm", "value"]
    assert len(profile) == 128


def test_scan_analyze_from_csv(small_config, tmp_path, out_dir):
    positions = np.arange(16) / 16 * 532.0
    phases = 4.0 + 9.0 * np.sin(2 * math.pi * positions / 532.0)
    path = tmp_path / "scan.csv"
    pd.DataFrame({"position_nm": positions, "phase_deg": phases}).to_csv(path, index=False)

    assert run_command(["scan-analyze", "--config", small_config, "--input", str(path), "--out", str(out_dir)]) == 0
    report = read_report(out_dir / "phase_scan.txt")
    assert float(report["peak_to_peak"]) == pytest.approx(18.0, abs=1e-4)
    assert float(report["period"]) == pytest.approx(532.0, rel=1e-4)
    assert (out_dir / "phase_scan.xlsx").exists()


def test_scan_analyze_reports_degrees_per_watt(tmp_path, out_dir):
    positions = np.arange(16) / 16 * 532.0
    path = tmp_path / "scan.csv"
    pd.DataFrame({"position_nm": positions, "phase_deg": 9.0 * np.cos(2 * math.pi * positions / 532.0)}).to_csv(
        path, index=False
    )
    settings = {"grid_n": 256, "power_w": 4.4, "cavity_gain": 2700.0}
    cfg = run_config_from_dict(settings)

    result = scan_analyze_pipeline(cfg, out_dir, input_path=str(path))

    assert result["success"], result.get("error")
    report = read_report(out_dir / "phase_scan.txt")
    assert float(report["power"]) == pytest.approx(4.4)
    assert float(report["deg_per_watt"]) == pytest.approx(18.0 / 4.4, rel=1e-6)
    predicted = math.degrees(peak_phase_from_power(2700.0, cfg.mode(), cfg.beam()))
    assert float(report["predicted_deg_per_watt"]) == pytest.approx(predicted, rel=1e-6)
    summary = pd.read_excel(out_dir / "phase_scan.xlsx", sheet_name="summary", engine="openpyxl")
    assert "deg_per_watt" in summary["parameter"].tolist()


def test_scan_analyze_without_power_has_no_slope(small_config, tmp_path, out_dir):
    positions = np.arange(16) / 16 * 532.0
    path = tmp_path / "scan.csv"
    pd.DataFrame({"position_nm": positions, "phase_deg": np.sin(2 * math.pi * positions / 532.0)}).to_csv(
        path, index=False
    )
    assert run_command(["scan-analyze", "--config", small_config, "--input", str(path), "--out", str(out_dir)]) == 0
    assert "deg_per_watt" not in read_report(out_dir / "phase_scan.txt")


@pytest.mark.slow
def test_fit_ronchigram_reports_degrees_per_watt(tmp_path):
    settings = {"grid_n": 256, "eta0_deg": 38.0, "dose_counts": 100.0, "outer_repetitions": 1}
    simulated = simulate_ronchigram_pipeline(run_config_from_dict(settings), tmp_path / "simulated")
    assert simulated["success"], simulated.get("error")

    cfg = run_config_from_dict({**settings, "power_w": 7.45})
    result = fit_ronchigram_pipeline(cfg, tmp_path / "fit", input_path=str(tmp_path / "simulated" / "ronchigram.lpp"))

    assert result["success"], result.get("error")
    report = read_report(tmp_path / "fit" / "ronchigram_fit.txt")
    assert float(report["deg_per_watt"]) == pytest.approx(float(report["eta0"]) / 7.45, rel=1e-6)
    assert "predicted_deg_per_watt" not in report


@pytest.mark.slow
def test_synthesized_phase_scan(out_dir):
    cfg = run_config_from_dict({"defocus_nm": -500.0, "eta0_deg": 18.0, "phase_rms_rad": 0.05, "seed": 1})
    result = scan_analyze_pipeline(cfg, out_dir)

    assert result["success"], result.get("error")
    assert result["summary"]["period"][0] == pytest.approx(532.0, rel=0.02)
    assert result["summary"]["peak_to_peak"][0] == pytest.approx(18.0, abs=1.5)


# ----------------------------------------------------------------------------
# output staging
# ----------------------------------------------------------------------------

@pipeline("export-check")
def _failing_export(cfg, input_path):
    outputs = Outputs()
    outputs.reports["partial"] = {"value": 1.0}
    # an empty workbook is rejected after the report has been written
    outputs.workbooks["empty"] = {}
    return outputs


def test_failed_export_leaves_no_directory(tmp_path):
    out = tmp_path / "out"
    result = _failing_export(run_config_from_dict(SMALL), out)

    assert result["exit_code"] == 2
    assert list(tmp_path.iterdir()) == []


def test_failed_export_keeps_previous_outputs(out_dir):
    out_dir.mkdir()
    (out_dir / "notes.txt").write_text("earlier run")

    assert _failing_export(run_config_from_dict(SMALL), out_dir)["exit_code"] == 2

    assert [p.name for p in out_dir.iterdir()] == ["notes.txt"]
    assert (out_dir / "notes.txt").read_text() == "earlier run"
    assert [p.name for p in out_dir.parent.iterdir()] == ["out"]


def test_rerun_replaces_outputs_without_leftovers(tmp_path):
    out = tmp_path / "out"
    for _ in range(2):
        result = ctf_map_pipeline(run_config_from_dict(SMALL), out)
        assert result["success"], result.get("error")

    assert [p.name for p in tmp_path.iterdir()] == ["out"]
    assert set(_manifest(out)["outputs"]) == {p.name for p in out.iterdir()} - {"manifest.json"}
