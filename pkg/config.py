"""
General settings for the laser phase plate toolkit
"""

import logging
import os

try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    pass

# ============================================================================
# RUNTIME
# ============================================================================

# Caps scipy.fft workers; 0 means "all cores" (scipy convention -1)
LPP_THREADS = int(os.getenv("LPP_THREADS", "0"))

LOG_LEVEL = os.getenv("LPP_LOG_LEVEL", "INFO")

# Manifest timestamps
TIMEZONE = os.getenv("TIMEZONE", "UTC")

# ============================================================================
# DEFAULTS (80 kV, 1064 nm cavity, NA 0.026, f = 20 mm)
# ============================================================================

DEFAULT_GRID = int(os.getenv("LPP_DEFAULT_GRID", "2048"))
DEFAULT_WEDGE_DEG = float(os.getenv("LPP_WEDGE_DEG", "15"))

DEFAULT_VOLTAGE_KV = 80.0
DEFAULT_LAMBDA_L_NM = 1064.0
DEFAULT_NA = 0.026
DEFAULT_F_MM = 20.0
# Gaussian envelope, half maximum at (0.51 nm)^-1
DEFAULT_ENVELOPE_NM = 0.51

# Ronchigram fit
RONCHIGRAM_OUTER_REPETITIONS = 5
RONCHIGRAM_SIMPLEX_TOL = 1e-6

# Dead pixels: > 6 local MAD (15x15) from the 5x5 median
DEAD_PIXEL_MAD = 6.0
DEAD_PIXEL_WINDOW = 5
DEAD_PIXEL_MAD_WINDOW = 15


def fft_workers() -> int:
    """Number of workers handed to scipy.fft"""
    return -1 if LPP_THREADS <= 0 else LPP_THREADS


def setup_logging(level: str = None) -> None:
    """Configures the [LEVEL] message format for every module"""
    logging.basicConfig(
        level=getattr(logging, (level or LOG_LEVEL).upper(), logging.INFO),
        format="[%(levelname)s] %(message)s",
    )


# ============================================================================
# VALIDATION
# ============================================================================

def validate_config():
    """Checks that the environment settings hold usable values"""

    problems = []

    if LPP_THREADS < 0:
        problems.append(f"LPP_THREADS={LPP_THREADS} (must be >= 0)")
    if DEFAULT_GRID < 16 or DEFAULT_GRID % 2:
        problems.append(f"LPP_DEFAULT_GRID={DEFAULT_GRID} (must be even and >= 16)")
    if not 0 <= DEFAULT_WEDGE_DEG < 90:
        problems.append(f"LPP_WEDGE_DEG={DEFAULT_WEDGE_DEG} (must be in [0, 90))")
    if LOG_LEVEL.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        problems.append(f"LPP_LOG_LEVEL={LOG_LEVEL}")

    if problems:
        raise ValueError(f"Invalid settings: {', '.join(problems)}")

    return True
