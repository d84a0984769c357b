"""Command-line entry point: ``sheetscale <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .harness import (
    COLUMN_HELP,
    DEFAULTS,
    EXPERIMENTS,
    MODELS,
    NUMERIC_FAILURES,
    ConfigError,
    FitError,
    fit_scaling,
    read_table,
    report,
    run_sweep,
    validate_config,
)
from .optim import ConvergenceError, NumericError

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC = 0, 1, 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sheetscale",
        description="Energy sweeps and scaling fits for thin-sheet models.",
        epilog=COLUMN_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(
            name,
            help=f"run the {name} sweep",
            epilog=COLUMN_HELP,
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        p.add_argument("--config", type=Path, help="JSON sweep configuration (defaults are used if omitted)")
        p.add_argument("--out", type=Path, help="output CSV (overrides output_path)")
        p.add_argument("--seed", type=int, help="optimizer seed (overrides optim.seed)")
        p.add_argument("--threads", type=int, default=1, help="worker processes (default 1)")
        p.add_argument("--grid-n", type=int, help="radial grid nodes (overrides grid_n)")

    p = sub.add_parser("fit", help="fit a scaling model to a sweep CSV")
    p.add_argument("--config", type=Path, help="unused; accepted for symmetry")
    p.add_argument("table", type=Path, help="sweep CSV")
    p.add_argument("--model", choices=sorted(MODELS), required=True)
    p.add_argument("--select", action="append", default=[], metavar="COL=VALUE", help="keep rows with COL equal to VALUE (repeatable)")
    p.add_argument("--out", type=Path, help="write the fit as JSON here")

    p = sub.add_parser("report", help="write a JSON + text summary of a sweep CSV")
    p.add_argument("--config", type=Path, help="unused; accepted for symmetry")
    p.add_argument("table", type=Path, help="sweep CSV")
    p.add_argument("--fits", type=Path, nargs="*", default=[], help="fit JSON files from `sheetscale fit`")
    p.add_argument("--out", type=Path, required=True, help="output base path (.json and .txt are appended)")
    return parser


def _sweep_config(args):
    if args.config is not None:
        raw = json.loads(args.config.read_text())
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a JSON object")
        if raw.get("experiment", args.command) != args.command:
            raise ConfigError(f"config experiment {raw['experiment']!r} does not match subcommand {args.command!r}")
        raw = {**raw, "experiment": args.command}
    else:
        raw = {"experiment": args.command, **DEFAULTS[args.command]}
    if args.grid_n is not None:
        raw["grid_n"] = args.grid_n
    if args.seed is not None:
        raw["optim"] = {**raw.get("optim", {}), "seed": args.seed}
    if args.threads < 1:
        raise ConfigError("--threads must be at least 1")
    cfg = validate_config(raw)
    if args.out is not None:
        cfg = replace(cfg, output_path=str(args.out))
    return cfg


def _select(rows, selections):
    for item in selections:
        if "=" not in item:
            raise ConfigError(f"--select expects COL=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        try:
            target = float(value)
        except ValueError:
            target = value
        rows = [r for r in rows if r.get(key) == target]
    return rows


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command in EXPERIMENTS:
            cfg = _sweep_config(args)
            result = run_sweep(cfg, threads=args.threads)
            failed = result.failed()
            for row in failed:
                print(f"point failed: {row['error']}", file=sys.stderr)
            print(f"wrote {len(result.rows)} rows to {cfg.output_path}")
            numeric = tuple(e.__name__ for e in NUMERIC_FAILURES)
            if any(row["error"].split(":", 1)[0] in numeric for row in failed):
                return EXIT_NUMERIC
            return EXIT_OK
        if args.command == "fit":
            rows = _select(read_table(args.table), args.select)
            fit = fit_scaling(rows, args.model)
            text = json.dumps(fit.as_dict(), indent=2, sort_keys=True)
            if args.out:
                args.out.write_text(text + "\n")
            print(text)
            return EXIT_OK
        if args.command == "report":
            fits = [json.loads(p.read_text()) for p in args.fits]
            json_path, txt_path = report(read_table(args.table), fits, args.out)
            print(txt_path.read_text(), end="")
            return EXIT_OK
    except (ConfigError, FitError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericError, ConvergenceError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
