"""
Laser Phase Plate toolkit - command-line entry point

    python app.py <subcommand> [--config run.json] [--out DIR] [--seed N]
                               [--format raster|csv|png] [--input FILE]

Exit codes: 0 success, 1 runtime or fit error, 2 invalid input.
"""

import argparse
import logging
import sys
from typing import List, Optional

import config
from services.pipeline import EXIT_OK, EXIT_VALIDATION, FORMATS, PIPELINES
from services.run_config import load_run_config

logger = logging.getLogger(__name__)

DESCRIPTIONS = {
    "simulate-ronchigram": "Ronchigram of the standing wave by Fresnel propagation",
    "simulate-image": "weak-phase micrograph of a random phase object",
    "ctf-map": "CTF map, angular RMS profile and plateau report",
    "rms-profile": "angular RMS profile of a raster (or of the configured CTF)",
    "fit-ronchigram": "fit eta0, NA and coincidence loss to a Ronchigram",
    "fit-ctf": "Thon-ring fit of defocus, C_s and the constant laser phase",
    "scan-analyze": "peak-to-peak phase and period of a beam-position scan",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat JSON run configuration")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--format", default="raster", choices=FORMATS, help="raster output format")
    common.add_argument("--input", help="input raster, MRC file or scan CSV")
    common.add_argument("--log-level", help="overrides LPP_LOG_LEVEL")

    parser = argparse.ArgumentParser(prog="lpp", description="Laser phase plate simulation and analysis")
    commands = parser.add_subparsers(dest="command", metavar="<subcommand>")
    commands.required = True
    for name in PIPELINES:
        commands.add_parser(name, parents=[common], help=DESCRIPTIONS[name], description=DESCRIPTIONS[name])
    return parser


def run_command(argv: Optional[List[str]] = None) -> int:
    """Runs one subcommand and returns its exit code"""

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse has already printed usage
        return EXIT_VALIDATION if exc.code else EXIT_OK

    config.setup_logging(args.log_level)

    try:
        config.validate_config()
        run_config = load_run_config(args.config, seed=args.seed)
    except ValueError as exc:
        logger.error(str(exc))
        return EXIT_VALIDATION

    result = PIPELINES[args.command](run_config, args.out, args.format, args.input)

    if not result["success"]:
        return result["exit_code"]

    for path in result["outputs"]:
        print(path)
    return EXIT_OK


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
