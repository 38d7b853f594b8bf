"""Command line entry point: ``mmoment <scenario> --config PATH``."""
from __future__ import annotations

import argparse
import sys

from .config import SCENARIOS, load_config
from .errors import ConfigError, NumericError, PropertyViolation
from .experiments import ScenarioError, run_scenario, write_csv

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_PROPERTY = 0, 2, 3, 4


def _seed(text):
    v = int(text, 0)
    if not 0 <= v < 1 << 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def build_parser():
    ap = argparse.ArgumentParser(prog="mmoment", description="Run an empirical-moment experiment and write CSV rows.")
    ap.add_argument("scenario", choices=SCENARIOS)
    ap.add_argument("--config", required=True, help="key = value config file")
    ap.add_argument("--seed", type=_seed, help="override the config seed")
    ap.add_argument("--out", default="-", help="output CSV path, '-' for stdout (default)")
    ap.add_argument("--threads", type=int, help="override the worker count")
    return ap


def _emit(rows, out):
    if out == "-":
        write_csv(rows, sys.stdout)
        sys.stdout.flush()
    else:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            write_csv(rows, fh)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.scenario, args.seed, args.threads)
        rows = run_scenario(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ScenarioError as exc:
        if exc.rows:
            _emit(exc.rows, args.out)
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except PropertyViolation as exc:
        print(f"property violation: {exc}", file=sys.stderr)
        return EXIT_PROPERTY
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    _emit(rows, args.out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
