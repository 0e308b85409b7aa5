"""
Raster files - native header+payload format and MRC-2014 (mode 2)

Native layout (little-endian, 64-byte header):
    0   magic        8 bytes  b"LPPRAST1"
    8   width        u4
    12  height       u4
    16  pixel_size   f8       meters (1/m for frequency-plane rasters)
    24  plane        u1       0 image, 1 diffraction, 2 frequency
    25  kind         u1       0 intensity, 1 phase, 2 ctf
    26  reserved     38 bytes
    64  payload      float32, row-major
"""

import logging
import os
import shutil
import tempfile
from contextlib import contextmanager
from pathlib import Path

import mrcfile
import numpy as np

from services.errors import RasterIOError
from services.raster import KINDS, PLANES, RasterImage

logger = logging.getLogger(__name__)

MAGIC = b"LPPRAST1"
HEADER_SIZE = 64
HEADER_DTYPE = np.dtype([
    ("magic", "S8"),
    ("width", "<u4"),
    ("height", "<u4"),
    ("pixel_size", "<f8"),
    ("plane", "u1"),
    ("kind", "u1"),
    ("reserved", "V38"),
])
PAYLOAD_DTYPE = np.dtype("<f4")

MRC_EXTENSIONS = (".mrc", ".mrcs")
MRC_MODE_FLOAT32 = 2
MRC_MODE_OFFSET = 12
MRC_CELL_OFFSET = 40
ANGSTROM = 1e-10


# ============================================================================
# ATOMIC WRITES
# ============================================================================

@contextmanager
def atomic_path(path):
    """
    Yields a temporary path next to `path`; it replaces `path` only if the
    block completes
    """

    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        handle, temporary = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.", suffix=target.suffix)
        os.close(handle)
    except OSError as exc:
        raise RasterIOError(f"cannot write {target}: {exc}") from exc

    try:
        yield temporary
        os.replace(temporary, target)
    except OSError as exc:
        raise RasterIOError(f"cannot write {target}: {exc}") from exc
    finally:
        if os.path.exists(temporary):
            os.remove(temporary)


@contextmanager
def staged_directory(path):
    """
    Yields an empty directory beside `path`; its files move into `path`
    only if the block completes, manifest.json last
    """

    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        staging = Path(tempfile.mkdtemp(dir=target.parent, prefix=f".{target.name}.staging-"))
    except OSError as exc:
        raise RasterIOError(f"cannot create {target}: {exc}") from exc

    try:
        yield staging
        if target.exists():
            for entry in sorted(staging.iterdir(), key=lambda p: (p.name == "manifest.json", p.name)):
                os.replace(entry, target / entry.name)
        else:
            os.replace(staging, target)
    except OSError as exc:
        raise RasterIOError(f"cannot write {target}: {exc}") from exc
    finally:
        shutil.rmtree(staging, ignore_errors=True)


# ============================================================================
# NATIVE FORMAT
# ============================================================================

def encode_raster(image: RasterImage) -> bytes:
    header = np.zeros(1, dtype=HEADER_DTYPE)
    header["magic"] = MAGIC
    header["width"] = image.width
    header["height"] = image.height
    header["pixel_size"] = image.pixel_size
    header["plane"] = PLANES.index(image.plane)
    header["kind"] = KINDS.index(image.kind)
    payload = np.ascontiguousarray(image.values, dtype=PAYLOAD_DTYPE)
    return header.tobytes() + payload.tobytes()


def decode_raster(data: bytes, source: str = "<bytes>") -> RasterImage:
    """Parses a native raster; every failure names the byte offset involved"""

    if len(data) < HEADER_SIZE:
        raise RasterIOError(f"{source}: truncated header ({len(data)} of {HEADER_SIZE} bytes)", offset=len(data))

    header = np.frombuffer(data[:HEADER_SIZE], dtype=HEADER_DTYPE)[0]
    if bytes(header["magic"]) != MAGIC:
        raise RasterIOError(f"{source}: bad magic {bytes(header['magic'])!r}", offset=0)

    width, height = int(header["width"]), int(header["height"])
    if width == 0 or height == 0:
        raise RasterIOError(f"{source}: empty raster {width}x{height}", offset=8)

    pixel_size = float(header["pixel_size"])
    if not np.isfinite(pixel_size) or pixel_size <= 0:
        raise RasterIOError(f"{source}: pixel size must be > 0, got {pixel_size}", offset=16)

    plane_code, kind_code = int(header["plane"]), int(header["kind"])
    if plane_code >= len(PLANES):
        raise RasterIOError(f"{source}: unknown plane code {plane_code}", offset=24)
    if kind_code >= len(KINDS):
        raise RasterIOError(f"{source}: unknown value-kind code {kind_code}", offset=25)

    expected = width * height * PAYLOAD_DTYPE.itemsize
    payload = data[HEADER_SIZE:]
    if len(payload) != expected:
        raise RasterIOError(
            f"{source}: payload has {len(payload)} bytes, header {width}x{height} needs {expected}",
            offset=HEADER_SIZE + min(len(payload), expected),
        )

    values = np.frombuffer(payload, dtype=PAYLOAD_DTYPE).reshape(height, width).astype(np.float64)
    return RasterImage(values, pixel_size, PLANES[plane_code], KINDS[kind_code])


# ============================================================================
# MRC
# ============================================================================

def read_mrc(path) -> RasterImage:
    """Reads a single-section mode-2 MRC file; voxel size is converted from Angstrom"""

    try:
        with mrcfile.open(path, mode="r", permissive=False) as mrc:
            mode = int(mrc.header.mode)
            if mode != MRC_MODE_FLOAT32:
                raise RasterIOError(f"{path}: unsupported MRC mode {mode} (only mode 2)", offset=MRC_MODE_OFFSET)
            data = np.array(mrc.data, dtype=np.float64)
            voxel = float(mrc.voxel_size.x)
    except RasterIOError:
        raise
    except (ValueError, OSError) as exc:
        raise RasterIOError(f"{path}: not a readable MRC file ({exc})", offset=0) from exc

    if data.ndim == 3 and data.shape[0] == 1:
        data = data[0]
    if data.ndim != 2:
        raise RasterIOError(f"{path}: expected one 2-D section, got shape {data.shape}", offset=0)
    if voxel <= 0:
        raise RasterIOError(f"{path}: MRC voxel size is {voxel}", offset=MRC_CELL_OFFSET)

    return RasterImage(data, voxel * ANGSTROM)


def write_mrc(image: RasterImage, path) -> None:
    with atomic_path(path) as temporary:
        with mrcfile.new(temporary, overwrite=True) as mrc:
            mrc.set_data(np.ascontiguousarray(image.values, dtype=np.float32))
            mrc.voxel_size = image.pixel_size / ANGSTROM


# ============================================================================
# DISPATCH
# ============================================================================

def read_raster(path) -> RasterImage:
    """Native raster, or MRC for .mrc/.mrcs paths"""

    path = Path(path)
    if path.suffix.lower() in MRC_EXTENSIONS:
        return read_mrc(path)

    try:
        data = path.read_bytes()
    except OSError as exc:
        raise RasterIOError(f"cannot read {path}: {exc}") from exc
    image = decode_raster(data, str(path))
    logger.debug(f"Read {path}: {image.width}x{image.height}, {image.plane}/{image.kind}")
    return image


def write_raster(image: RasterImage, path) -> None:
    path = Path(path)
    if path.suffix.lower() in MRC_EXTENSIONS:
        write_mrc(image, path)
        return

    with atomic_path(path) as temporary:
        with open(temporary, "wb") as handle:
            handle.write(encode_raster(image))
    logger.debug(f"Wrote {path}")
