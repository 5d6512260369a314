"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import sys

from . import runner


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qkdbench",
        description="Satellite BB84 link simulator and post-processing toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run a named preset sweep and emit "
                                     "CSV/PNG/JSON artifacts.")
    run.add_argument("--preset", required=True,
                     help="preset name (fig2..fig7, table3)")
    run.add_argument("--set", dest="overrides", action="append", default=[],
                     metavar="PATH=VALUE",
                     help="override a config leaf, e.g. signal.mu=0.3")
    run.add_argument("--seed", type=int, default=None, help="override the seed")
    run.add_argument("--out", default=".", help="output directory")
    run.add_argument("--config", default=None,
                     help="alternative preset/config file (YAML)")
    run.add_argument("--no-render", action="store_true",
                     help="skip PNG rendering")

    val = sub.add_parser("validate", help="Check a config file's invariants.")
    val.add_argument("--config", required=True, help="config file (YAML)")
    val.add_argument("--preset", default=None,
                     help="also resolve this preset before validating")

    pas = sub.add_parser("pass", help="Emit the satellite pass profile (fig7).")
    pas.add_argument("--config", default=None, help="config file (YAML)")
    pas.add_argument("--out", default=".", help="output directory")
    pas.add_argument("--seed", type=int, default=None)
    pas.add_argument("--set", dest="overrides", action="append", default=[],
                     metavar="PATH=VALUE")
    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    manifest = runner.run_preset(
        args.preset, args.out, seed=args.seed, overrides=args.overrides,
        config_path=args.config, render=not args.no_render)
    print(f"wrote {manifest['csv']} ({manifest['rows']} rows)")
    print(f"wrote {manifest['summary']}")
    return 0


def _cmd_validate(args: argparse.Namespace) -> int:
    doc = runner.load_presets(args.config)
    names = [args.preset] if args.preset else sorted(doc["presets"])
    failures = 0
    for name in names:
        config, _ = runner.resolve_config(doc, name)
        diagnostics = runner.validate_config(config)
        if diagnostics:
            failures += 1
            for item in diagnostics:
                print(f"{name}: {item}", file=sys.stderr)
    if failures:
        return 1
    print(f"ok: {len(names)} preset(s) valid")
    return 0


def _cmd_pass(args: argparse.Namespace) -> int:
    manifest = runner.run_preset("fig7", args.out, seed=args.seed,
                                 overrides=args.overrides,
                                 config_path=args.config)
    print(f"wrote {manifest['csv']} ({manifest['rows']} rows)")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "validate":
            return _cmd_validate(args)
        if args.command == "pass":
            return _cmd_pass(args)
        return 2
    except runner.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
