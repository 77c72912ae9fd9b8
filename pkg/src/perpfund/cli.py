"""Command-line entry point: ``perpfund {track,delay-sweep,calibrate,app,selftest}``.

Exit codes: 0 all checks pass, 1 a check failed, 2 configuration error, 3 numeric error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .config import ENV_PREFIX, load_config
from .errors import ConfigError, NumericError

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON experiment config")
    common.add_argument("--seed", type=int, help="unsigned 64-bit master seed")
    common.add_argument("--threads", type=int, help="worker threads for noise generation")
    common.add_argument("--out", help="output directory")
    common.add_argument("--allow-nonunique", action="store_true", default=None,
                        help="run even when ell is below the uniqueness threshold")
    common.add_argument("--format", choices=("csv", "json"), help="table format")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(
        prog="perpfund",
        description="Funding-rate design, pricing and replication for perpetual futures.",
        epilog=f"Environment overrides: {ENV_PREFIX}<SECTION>__<KEY>=<yaml value>, "
               f"e.g. {ENV_PREFIX}MC__PATHS=50000.",
    )
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("track", parents=[common], help="designed spot rate: solve, track, verify")
    ds = sub.add_parser("delay-sweep", parents=[common], help="windowed-rate error versus window length")
    ds.add_argument("--quick", action="store_true", help="only the reference window 1/1095")
    sub.add_parser("calibrate", parents=[common], help="threshold, feasible interval and bound constants")
    app = sub.add_parser("app", parents=[common], help="end-to-end application pipeline")
    app.add_argument("which", choices=("power_index", "product", "fx", "cfmm"))
    sub.add_parser("selftest", parents=[common], help="fast property suite")
    return p


def _overrides(args) -> dict:
    o: dict = {}
    if args.seed is not None:
        o.setdefault("mc", {})["seed"] = args.seed
    if args.threads is not None:
        o["threads"] = args.threads
    if args.out is not None:
        o.setdefault("output", {})["directory"] = args.out
    if args.format is not None:
        o.setdefault("output", {})["format"] = args.format
    if args.allow_nonunique:
        o["allow_nonunique"] = True
    if getattr(args, "quick", False):
        o.setdefault("sweep", {})["quick"] = True
    return o


def _print_checks(summary: dict, stream):
    for name, c in summary["checks"].items():
        status = "PASS" if c["passed"] else "FAIL"
        extra = ""
        if c.get("value") is not None:
            extra = f" value={c['value']}" + (f" limit={c['limit']}" if c.get("limit") is not None else "")
        print(f"{status} {name}{extra}", file=stream)
    for note in summary.get("notes", []):
        print(f"NOTE {note}", file=stream)
    print(f"{'PASS' if summary['passed'] else 'FAIL'} {summary['experiment']}", file=stream)


def _selftest(cfg) -> dict:
    from .selftest import run_selftest

    checks = {n: {"passed": bool(ok), "value": detail or None, "limit": None} for n, ok, detail in run_selftest(cfg.mc.seed)}
    summary = {"experiment": "selftest", "passed": all(c["passed"] for c in checks.values()), "checks": checks, "notes": []}
    os.makedirs(cfg.output.directory, exist_ok=True)
    with open(os.path.join(cfg.output.directory, "resolved_config.json"), "w") as fh:
        fh.write(cfg.to_json())
    with open(os.path.join(cfg.output.directory, "results.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return summary


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
        if args.command == "selftest":
            summary = _selftest(cfg)
        else:
            from . import experiments as ex

            if args.command == "track":
                result = ex.run_track(cfg)
            elif args.command == "delay-sweep":
                result = ex.run_delay_sweep(cfg)
            elif args.command == "calibrate":
                result = ex.run_calibrate(cfg)
            else:
                result = ex.run_application(cfg, args.which)
            summary = ex.write_outputs(result, cfg.output.directory, cfg.output.format)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, ArithmeticError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    _print_checks(summary, sys.stdout)
    return EXIT_OK if summary["passed"] else EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
