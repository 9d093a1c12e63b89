"""Command-line entry point."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

from .certificates import PreconditionError
from .harness import (EXIT_CONFIG, EXIT_OK, EXIT_REFUSED, ConfigError, ExperimentConfig,
                      reproduce_figures, run_certify, run_complexity, run_coverage, run_solve,
                      run_validate)


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment config")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--format", choices=("json", "csv"), default="json")
    p = argparse.ArgumentParser(prog="margin-scenario",
                                description="Margin-based scenario certificates for nonconvex chance constraints.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("certify", "compute violation certificates"),
                        ("solve", "solve a sampled margin program"),
                        ("validate", "Monte-Carlo validate a decision"),
                        ("complexity", "sample and margin complexities"),
                        ("coverage", "empirical coverage of the certificate"),
                        ("reproduce-figures", "write the figure CSVs")):
        sub.add_parser(name, parents=[common], help=help_)
    return p


def _emit(obj, fmt):
    if fmt == "csv" and isinstance(obj, dict) and "records" in obj:
        rows = obj["records"]
        keys = [k for k in rows[0] if k != "x"] if rows else []
        w = csv.DictWriter(sys.stdout, keys, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
    else:
        print(json.dumps(obj, indent=2, sort_keys=True))


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "reproduce-figures":
            out = args.out or Path("figures")
            tables = reproduce_figures(out)
            print(json.dumps({"written": sorted(str(out / k) for k in tables)}, indent=2))
            return EXIT_OK
        if args.config is None:
            raise ConfigError("--config is required")
        cfg = ExperimentConfig.load(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed, solver=replace(cfg.solver, seed=args.seed))
        out = args.out or Path(cfg.out)
        if args.command == "certify":
            summary, code = run_certify(cfg, out)
            _emit(summary, "json")
            return code
        if args.command == "solve":
            _emit(run_solve(cfg, out), "json")
        elif args.command == "validate":
            _emit(run_validate(cfg, out, args.workers), "json")
        elif args.command == "complexity":
            _emit(run_complexity(cfg, out, args.format), "json")
        elif args.command == "coverage":
            rep = run_coverage(cfg, out, args.workers)
            for w in rep.warnings:
                print(f"warning: {w}", file=sys.stderr)
            _emit(rep.to_dict(), args.format)
        return EXIT_OK
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except PreconditionError as e:
        print(f"refused: {e}", file=sys.stderr)
        return EXIT_REFUSED


if __name__ == "__main__":
    sys.exit(main())
