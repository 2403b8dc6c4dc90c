"""``ffpm`` command line: one subcommand per campaign stage.

Exit codes: 0 success, 2 configuration error, 3 missing/stale upstream
artifact (or a locked campaign directory), 4 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .campaign import Campaign, LockError, NumericalFailure, UpstreamError
from .config import CampaignConfig, ConfigError, default_config_path

EXIT_OK, EXIT_CONFIG, EXIT_UPSTREAM, EXIT_NUMERICAL = 0, 2, 3, 4

COMMANDS = {
    "generate-reference": "solve the pore-scale reference and extract observations",
    "train": "fit prior or posterior surrogates",
    "sensitivity": "Sobol indices of the prior surrogates",
    "calibrate": "MCMC calibration against the calibration points",
    "validate": "posterior-predictive values at the validation points",
    "compare": "model weights and Bayes factors over perturbed replicates",
    "run-all": "every stage in order",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="campaign TOML file (default: the shipped desk-scale campaign)")
    common.add_argument("--seed-override", type=int, help="replace the configured master seed")
    common.add_argument("--output-dir", help="campaign directory (default: output_dir from the config)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for per-output fits")
    common.add_argument("--force", action="store_true", help="re-run stages even if up to date")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ffpm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=text, description=text)
        if name in ("train", "sensitivity", "calibrate", "validate"):
            p.add_argument("--model", help="model id (default: all configured models)")
        if name == "train":
            p.add_argument("--phase", choices=("prior", "posterior"), default="prior")
    return parser


def load_config(args) -> CampaignConfig:
    cfg = CampaignConfig.load(args.config or default_config_path())
    if args.seed_override is not None:
        cfg = cfg.with_seed(args.seed_override)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        camp = Campaign(load_config(args), args.output_dir, args.jobs)
        camp.run(args.command, getattr(args, "model", None), getattr(args, "phase", "prior"), args.force)
    except ConfigError as exc:
        print(f"ffpm: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (UpstreamError, LockError) as exc:
        print(f"ffpm: {exc}", file=sys.stderr)
        return EXIT_UPSTREAM
    except NumericalFailure as exc:
        print(f"ffpm: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for name in camp.ran:
        print(f"ran      {name}")
    for name in camp.skipped:
        print(f"current  {name}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
