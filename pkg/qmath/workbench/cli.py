from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from qmath.workbench.config import build_config, load_toml, parse_assignment, parse_value
from qmath.workbench.exceptions import ConfigError, Error, InvariantViolation, OutOfRegimeError
from qmath.workbench.experiments import REGISTRY, get_experiment, run_experiment

log = logging.getLogger(__name__)

LOG_ENV = "QMATH_WORKBENCH_LOG"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_OUT_OF_REGIME = 3
EXIT_INVARIANT = 4

# flag destination -> experiment parameter
PARAM_FLAGS = {
    "N": "N",
    "delta_override": "delta",
    "window": "window",
    "grid": "grid",
    "radius": "radius",
    "bundle": "bundle",
    "symmetry": "symmetry",
    "n": "n",
    "grid_step": "grid_step",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qmath-workbench", description="Run the numerical verification experiments.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-v info, -vv debug)")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("list", help="list the available experiments and their default parameters")

    validate = sub.add_parser("validate", help="check a config file and print the resolved configuration")
    validate.add_argument("config", type=Path, help="TOML file naming the experiment")

    run = sub.add_parser("run", help="run an experiment")
    run.add_argument("experiment", help="experiment name, see 'list'")
    run.add_argument("-c", "--config", type=Path, help="TOML file with common keys and a [params] table")
    run.add_argument("-o", "--output", type=Path, help="output directory (default: $QMATH_WORKBENCH_OUTPUT, ./results)")
    run.add_argument("-s", "--seed", type=int, help="base seed (default: 0)")
    run.add_argument("-j", "--workers", type=int, help="worker processes (default: 1)")
    run.add_argument("--N", dest="N", help="lattice or discretization sizes")
    run.add_argument("--delta-override", dest="delta_override", help="POVM grid spacing instead of sqrt(d epsilon)")
    run.add_argument("--window", choices=["bump", "hann"], help="POVM window")
    run.add_argument("--grid", help="grid points per angle for bundles")
    run.add_argument("--radius", help="strict locality radius")
    run.add_argument("--bundle", help="test:<c> or from-voiculescu:<N>")
    run.add_argument("--class", dest="symmetry", help="symmetry class: none, symmetric or selfdual")
    run.add_argument("--n", dest="n", help="number of bits")
    run.add_argument("--grid-step", dest="grid_step", help="spacing of the probability grid")
    run.add_argument(
        "--set",
        dest="assignments",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="set any experiment parameter, values are read as TOML",
    )
    return parser


def setup_logging(verbose: int) -> None:
    if verbose:
        level = logging.DEBUG if verbose > 1 else logging.INFO
    else:
        level = getattr(logging, os.environ.get(LOG_ENV, "WARNING").upper(), logging.WARNING)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _flag_params(args: argparse.Namespace) -> dict:
    params = {}
    for dest, key in PARAM_FLAGS.items():
        value = getattr(args, dest)
        if value is not None:
            params[key] = parse_value(value)
    for text in args.assignments:
        key, value = parse_assignment(text)
        params[key] = value
    return params


def cmd_list(args: argparse.Namespace) -> int:
    for name in sorted(REGISTRY):
        experiment = REGISTRY[name]
        print(f"{name}: {experiment.description}")
        for key, value in sorted(experiment.defaults.items()):
            print(f"    {key} = {json.dumps(value)}")
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    data = load_toml(args.config)
    if "experiment" not in data:
        raise ConfigError(f"Config file {args.config} does not name an experiment")
    experiment = get_experiment(data["experiment"])
    cfg = build_config(experiment.name, experiment.defaults, file=data)
    print(json.dumps(cfg.to_json(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    experiment = get_experiment(args.experiment)
    data = load_toml(args.config) if args.config else None
    cfg = build_config(
        experiment.name,
        experiment.defaults,
        file=data,
        flags=_flag_params(args),
        seed=args.seed,
        output=args.output,
        workers=args.workers,
    )
    result = run_experiment(cfg)
    print(f"{experiment.name}: {len(result.rows)} rows, results in {result.csv_path} and {result.summary_path}")
    return EXIT_OK


COMMANDS = {"list": cmd_list, "validate": cmd_validate, "run": cmd_run}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose)

    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        parser.print_usage(sys.stderr)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OutOfRegimeError as e:
        where = f" at theta={list(e.theta)}" if e.theta is not None else ""
        print(f"out of regime{where}: {e}", file=sys.stderr)
        return EXIT_OUT_OF_REGIME
    except InvariantViolation as e:
        print(f"invariant violated: {e}", file=sys.stderr)
        return EXIT_INVARIANT
    except Error as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
