#!/usr/bin/env python3
"""
Command line entry point.

    pr run --config FILE [--preset NAME] [--out DIR] [--seed N] [--algo NAME] [--resume]
    pr simulate --config FILE | --preset NAME [--out DIR] [--seed N]
    pr snr ESTIMATE TRUTH [--denominator estimate|truth]

Exit codes: 0 ok, 1 solver/cell failure, 2 usage or configuration error.
"""
import argparse
import sys
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from dotenv import load_dotenv

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent))

from experiment.config import (
    EXPERIMENT_ALGORITHMS,
    PRESETS,
    ConfigError,
    ExperimentSpec,
    parse_config,
    preset_text,
    read_entries,
)
from experiment.harness import run_experiment, run_simulation
from metrics.metrics import SNR_DENOMINATORS, snr
from utils.image_io import load_image


EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _add_config_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="Experiment config file (key = value lines)")
    parser.add_argument("--preset", choices=sorted(PRESETS), help="Built-in experiment; --config keys override it")
    parser.add_argument("--out", help="Output directory (default: $DICPR_OUTPUT_DIR or ./output)")
    parser.add_argument("--seed", type=int, action="append", help="Seed (repeatable); replaces config seeds")
    parser.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE",
        help="Override any config key (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pr", description="Poisson phase retrieval with dictionary learning")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run an experiment sweep")
    _add_config_arguments(run)
    run.add_argument("--algo", action="append", choices=EXPERIMENT_ALGORITHMS, help="Algorithm (repeatable)")
    run.add_argument("--resume", action="store_true", help="Skip cells whose outputs already exist")
    run.add_argument("--workers", type=int, help="Worker processes (default: $DICPR_WORKERS or 1)")

    simulate = sub.add_parser("simulate", help="Write simulated measurements only")
    _add_config_arguments(simulate)

    snr_parser = sub.add_parser("snr", help="Phase-aligned SNR between two images")
    snr_parser.add_argument("estimate", help="Estimated image (PGM, re.pgm+im.pgm, CPRM)")
    snr_parser.add_argument("truth", help="Ground truth image")
    snr_parser.add_argument("--denominator", choices=SNR_DENOMINATORS, default="estimate")
    return parser


def load_spec(args: argparse.Namespace) -> ExperimentSpec:
    """
    Resolve preset, config file and CLI flags into one spec (later sources win).

    Raises:
        ConfigError: On any configuration problem
    """
    if not args.config and not args.preset:
        raise ConfigError("one of --config or --preset is required")

    overrides: Dict[str, Union[str, Tuple[str, int]]] = {}
    if args.preset:
        text = preset_text(args.preset)
        overrides["name"] = args.preset
        if args.config:
            overrides.update(read_entries(_read_text(args.config)))
    else:
        text = _read_text(args.config)

    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    if args.out:
        overrides["out"] = args.out
    if args.seed:
        overrides["seed"] = ",".join(str(s) for s in args.seed)
    if getattr(args, "algo", None):
        overrides["algorithm"] = ",".join(args.algo)
    return parse_config(text, overrides)


def _read_text(path: str) -> str:
    config_path = Path(path)
    if not config_path.exists():
        raise ConfigError(f"config file not found: {config_path}")
    return config_path.read_text(encoding="utf-8")


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)

    if args.command == "snr":
        try:
            estimate, truth = load_image(args.estimate), load_image(args.truth)
            report = snr(estimate, truth, denominator=args.denominator)
        except (FileNotFoundError, ValueError) as e:
            print(f"❌ {e}")
            return EXIT_USAGE
        print(f"SNR = {report.snr_db:.4f} dB (phase {report.phase.real:+.6f}{report.phase.imag:+.6f}i)")
        return EXIT_OK

    try:
        spec = load_spec(args)
    except ConfigError as e:
        print(f"❌ Configuration error: {e}")
        return EXIT_USAGE

    if args.command == "simulate":
        return run_simulation(spec, args.out)
    status = run_experiment(spec, args.out, workers=args.workers, resume=args.resume)
    return EXIT_OK if status == 0 else EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
