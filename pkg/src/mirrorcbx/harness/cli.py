"""Command line interface.

Exit codes: 0 on success, 2 for configuration errors, 3 for runtime failures.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..errors import ConfigurationError
from ..variants import OPTIMIZER_KINDS
from .config import load_config
from .runner import run_experiment, sweep, write_outputs

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _parser():
    ap = argparse.ArgumentParser(prog="mirrorcbx", description="Consensus-based optimisation experiments")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment config")
    p.add_argument("config")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory (default: config output_dir or results/)")
    p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("sweep", help="run a config once per parameter value")
    p.add_argument("config")
    p.add_argument("--param", required=True, help="dotted path, e.g. optimizer.params.sigma")
    p.add_argument("--values", required=True, help="comma separated JSON scalars")
    p.add_argument("--out", default=None)
    p.add_argument("--workers", type=int, default=None)

    sub.add_parser("list-optimizers", help="print the available optimizer kinds")

    p = sub.add_parser("validate", help="check a config against the schema")
    p.add_argument("config")
    return ap


def _parse_values(text):
    out = []
    for item in text.split(","):
        item = item.strip()
        try:
            out.append(json.loads(item))
        except json.JSONDecodeError:
            out.append(item)
    return out


def _out_dir(args, cfg):
    return Path(args.out or cfg.output_dir or "results")


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.command == "list-optimizers":
        for kind in OPTIMIZER_KINDS + ("wirtinger_flow",):
            print(kind)
        return EXIT_OK
    try:
        cfg = load_config(args.config)
        if args.command == "validate":
            print(f"{args.config}: ok ({cfg.experiment})")
            return EXIT_OK
        if args.command == "run":
            if args.runs is not None and args.runs < 1:
                raise ConfigurationError("--runs must be >= 1")
            traces, summary = run_experiment(cfg, n_runs=args.runs, seed=args.seed, workers=args.workers)
            csv_path, json_path = write_outputs(_out_dir(args, cfg), cfg.experiment, traces, summary)
            print(f"success_rate={summary['success_rate']} mean_error={summary['mean_error']} "
                  f"failed={summary['n_failed']}")
            print(f"wrote {csv_path} and {json_path}")
            return EXIT_RUNTIME if summary["n_failed"] == summary["n_runs"] else EXIT_OK
        results = sweep(cfg, args.param, _parse_values(args.values), workers=args.workers,
                        out_dir=_out_dir(args, cfg))
        for value, _, summary in results:
            print(f"{args.param}={value}: success_rate={summary['success_rate']} "
                  f"mean_error={summary['mean_error']}")
        return EXIT_OK
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - top-level reporter
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
