"""``scheduler`` command-line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .asymptotics import AssumptionViolated
from .chain_dynamics import StateSpaceTooLarge
from .experiments import ConfigError, ExperimentConfig, run_custom, run_experiment
from .planning import NonConvergenceError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

COMMANDS = ("plan", "learn", "simulate", "threshold", "linear-plan", "example")


def load_config(path) -> dict:
    """Read a JSON or TOML config; the format is picked from content, not extension."""
    text = Path(path).read_text()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        return json.loads(text)
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    return tomllib.loads(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scheduler",
                                     description="Plan when to collect network data.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON or TOML file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int)
        grp = p.add_mutually_exclusive_group()
        grp.add_argument("--epsilon", type=float)
        grp.add_argument("--k", type=int)
        if name == "example":
            p.add_argument("--name", choices=("example1", "example2", "example3"),
                           help="run a built-in example with its default parameters")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        raw = load_config(args.config) if args.config else {}
        if args.command == "example":
            raw.setdefault("experiment", getattr(args, "name", None) or "")
            if raw["experiment"] not in ("example1", "example2", "example3"):
                raise ConfigError("example needs --name or an 'experiment' entry in the config")
        else:
            if not args.config:
                raise ConfigError(f"{args.command} needs --config")
            raw["experiment"] = "custom"
        cfg = ExperimentConfig.from_dict(raw, seed=args.seed, out_dir=args.out,
                                         epsilon=args.epsilon, k=args.k)
        if args.command == "example":
            result = run_experiment(cfg)
        else:
            result = run_custom(cfg, args.command)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError, StateSpaceTooLarge,
            KeyError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonConvergenceError, AssumptionViolated, np.linalg.LinAlgError,
            FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # includes TOML decode errors and model validation failures
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps(_brief(result), indent=2, sort_keys=True, default=str))
    return EXIT_OK


def _brief(result: dict) -> dict:
    """Drop bulky entries before echoing a summary to stdout."""
    skip = {"V_0_by_y", "first_collect", "first_collect_by_votes_for_A", "panels"}
    return {k: v for k, v in result.items() if k not in skip}


if __name__ == "__main__":
    sys.exit(main())
