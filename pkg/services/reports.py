"""
Exports: profile CSV, grayscale renders, key/value reports, xlsx tables
and the run manifest
"""

import hashlib
import json
import logging
import platform
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import mrcfile
import numpy as np
import pandas as pd
import PIL
import pytz
import scipy
from PIL import Image

import config
from services.errors import RasterIOError, ValidationError
from services.raster import RasterImage
from services.raster_io import atomic_path

logger = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = "%.17g"
MID_GRAY = 128
# fixed document date keeps xlsx output byte-reproducible
XLSX_CREATED = datetime(2000, 1, 1)


# ============================================================================
# PROFILES
# ============================================================================

def export_profile(profile: pd.DataFrame, path, columns: Optional[Sequence[str]] = None) -> Path:
    """
    Writes a radial (s_per_nm) or spatial (x_um) profile as CSV

    A profile carrying s_per_m is converted to s_per_nm; the abscissa is
    always the first column.
    """

    if profile is None or len(profile) == 0:
        raise ValidationError("profile is empty")

    frame = profile.copy()
    if "s_per_m" in frame.columns:
        frame.insert(0, "s_per_nm", frame.pop("s_per_m") * 1e-9)
    abscissa = "s_per_nm" if "s_per_nm" in frame.columns else "x_um"
    if abscissa not in frame.columns:
        raise ValidationError("profile needs an s_per_m, s_per_nm or x_um column")

    rest = [c for c in (columns or frame.columns) if c != abscissa]
    frame = frame[[abscissa] + rest]

    path = Path(path)
    with atomic_path(path) as temporary:
        frame.to_csv(temporary, index=False, float_format=CSV_FLOAT_FORMAT)
    logger.info(f"Profile written: {path} ({len(frame)} rows)")
    return path


def read_profile(path) -> pd.DataFrame:
    try:
        return pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise RasterIOError(f"cannot read profile {path}: {exc}") from exc


def export_table_csv(frame: pd.DataFrame, path) -> Path:
    path = Path(path)
    with atomic_path(path) as temporary:
        frame.to_csv(temporary, index=False, float_format=CSV_FLOAT_FORMAT)
    return path


def read_scan_csv(path) -> List[Tuple[float, float]]:
    """
    Phase-scan table with columns position_nm, phase_deg

    Returns:
        (position m, constant phase rad) pairs
    """

    frame = read_profile(path)
    missing = {"position_nm", "phase_deg"} - set(frame.columns)
    if missing:
        raise ValidationError(f"{path}: missing column(s) {', '.join(sorted(missing))}")
    if frame[["position_nm", "phase_deg"]].isna().any().any():
        raise ValidationError(f"{path}: empty cells in the scan table")

    positions = frame["position_nm"].to_numpy(dtype=float) * 1e-9
    phases = np.radians(frame["phase_deg"].to_numpy(dtype=float))
    return list(zip(positions.tolist(), phases.tolist()))


def export_raster_csv(image: RasterImage, path) -> Path:
    """Raster values as a headerless CSV matrix"""
    path = Path(path)
    with atomic_path(path) as temporary:
        pd.DataFrame(image.values).to_csv(temporary, index=False, header=False, float_format=CSV_FLOAT_FORMAT)
    return path


# ============================================================================
# GRAYSCALE RENDER
# ============================================================================

def to_grayscale(values: np.ndarray, scaling: str = "minmax") -> np.ndarray:
    """8-bit grayscale; a degenerate range renders as uniform mid-gray"""

    values = np.asarray(values, dtype=float)
    if scaling == "minmax":
        low, high = float(np.min(values)), float(np.max(values))
    elif scaling == "percentile":
        low, high = (float(v) for v in np.percentile(values, [1.0, 99.0]))
    else:
        raise ValidationError(f"unknown scaling {scaling!r}")

    if not high > low:
        return np.full(values.shape, MID_GRAY, dtype=np.uint8)
    scaled = np.clip((values - low) / (high - low), 0.0, 1.0)
    return np.rint(scaled * 255.0).astype(np.uint8)


def render_image(image: RasterImage, path, scaling: str = "minmax") -> Path:
    """PNG, or binary PGM for .pgm paths"""

    path = Path(path)
    gray = Image.fromarray(to_grayscale(image.values, scaling), mode="L")
    image_format = "PPM" if path.suffix.lower() == ".pgm" else "PNG"
    with atomic_path(path) as temporary:
        gray.save(temporary, format=image_format)
    return path


# ============================================================================
# REPORTS
# ============================================================================

def _format_value(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.10g}"
    if isinstance(value, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_format_value(v) for v in value) + "]"
    return str(value)


def write_report(entries: Mapping[str, Any], path) -> Path:
    """
    key = value [unit] lines in sorted key order

    Values may be plain or (value, unit) pairs.
    """

    lines = []
    for key in sorted(entries):
        entry = entries[key]
        if isinstance(entry, tuple) and len(entry) == 2 and isinstance(entry[1], str):
            value, unit = entry
            lines.append(f"{key} = {_format_value(value)} {unit}".rstrip())
        else:
            lines.append(f"{key} = {_format_value(entry)}")

    path = Path(path)
    with atomic_path(path) as temporary:
        Path(temporary).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_report(path) -> Dict[str, str]:
    """Inverse of write_report; values come back as strings without units"""
    entries = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if " = " in line:
            key, rest = line.split(" = ", 1)
            entries[key] = rest.split(" ")[0] if not rest.startswith("[") else rest
    return entries


def export_table_xlsx(frames: Mapping[str, pd.DataFrame], path) -> Path:
    """One sheet per frame with bold header row"""

    if not frames:
        raise ValidationError("no tables to export")

    path = Path(path)
    with atomic_path(path) as temporary:
        with pd.ExcelWriter(temporary, engine="xlsxwriter") as writer:
            workbook = writer.book
            workbook.set_properties({"created": XLSX_CREATED})

            header_format = workbook.add_format({
                "bold": True,
                "bg_color": "#4472C4",
                "font_color": "white",
                "border": 1,
                "align": "center",
                "valign": "vcenter",
            })

            for name, frame in frames.items():
                sheet = name[:31]
                frame.to_excel(writer, sheet_name=sheet, index=False, startrow=1, header=False)
                worksheet = writer.sheets[sheet]
                for column, title in enumerate(frame.columns.values):
                    worksheet.write(0, column, str(title), header_format)
                worksheet.set_column(0, max(len(frame.columns) - 1, 0), 18)

    logger.info(f"Workbook written: {path} ({len(frames)} sheet(s))")
    return path


# ============================================================================
# MANIFEST
# ============================================================================

def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def library_versions() -> Dict[str, str]:
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
        "mrcfile": mrcfile.__version__,
        "pillow": PIL.__version__,
    }


def write_manifest(out_dir, run_config: Mapping[str, Any], outputs: Iterable, command: str = "") -> Path:
    """manifest.json with config, library versions, timestamp and sha256 per output"""

    out_dir = Path(out_dir)
    timezone = pytz.timezone(config.TIMEZONE)
    manifest = {
        "command": command,
        "timestamp": datetime.now(timezone).isoformat(),
        "config": dict(run_config),
        "versions": library_versions(),
        "outputs": {Path(p).name: file_sha256(p) for p in sorted(outputs, key=lambda p: Path(p).name)},
    }

    path = out_dir / "manifest.json"
    with atomic_path(path) as temporary:
        Path(temporary).write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return path
