"""Command line: ``run``, ``verify``, ``plot`` and ``presets``."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import ConfigError, apply_overrides, dumps, load_config, preset_names

SUITES = {"gradcheck": "gradcheck", "lemma1": "lemma1_verify", "lemma2": "lemma2_verify",
          "perturbation": "perturbation_verify"}
# descriptive aliases for the two suites named after their source results
SUITES.update({"reconstruction": "lemma1_verify", "encoder": "lemma2_verify"})


def _resolve(target: str, args) -> dict:
    name = target
    if not Path(target).is_file() and target in ("case1", "case2"):
        name = f"{target}_{args.scale or 'desk'}"
    cfg = load_config(name)
    if args.scale and cfg.get("scale", "desk") != args.scale:
        raise ConfigError(f"{target} declares scale {cfg.get('scale')!r}, not {args.scale!r}")
    overrides = list(args.override or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out is not None:
        overrides.append(f"output_dir={json.dumps(args.out)}")
    return apply_overrides(cfg, overrides)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _run(cfg: dict, quiet: bool) -> int:
    from .experiments import run_experiment
    print(dumps(cfg), end="")
    try:
        out = run_experiment(cfg, log=None if quiet else _log)
    except Exception as exc:  # manifest with status "failed" is already on disk
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    manifest = json.loads((out / "manifest.json").read_text())
    print(f"artifacts: {out}")
    print(json.dumps(manifest["results"], sort_keys=True))
    passed = manifest["results"].get("passed")
    return 0 if passed in (None, True) else 1


def cmd_run(args) -> int:
    return _run(_resolve(args.config, args), args.quiet)


def cmd_verify(args) -> int:
    if args.suite not in SUITES:
        print(f"unknown suite {args.suite!r}; choose from {', '.join(SUITES)}", file=sys.stderr)
        return 2
    return _run(_resolve(SUITES[args.suite], args), args.quiet)


def cmd_plot(args) -> int:
    from .plots import plot_table
    with open(args.table, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        print(f"{args.table}: empty table", file=sys.stderr)
        return 2
    cols = list(rows[0].keys())
    x_key = args.x or cols[0]
    y_key = args.y or cols[1]
    try:
        svg = plot_table(rows, x_key, y_key, args.title or Path(args.table).stem, args.reference_slope)
    except (ValueError, KeyError) as exc:
        print(f"cannot plot {args.table}: {exc}", file=sys.stderr)
        return 2
    Path(args.out).write_text(svg)
    print(args.out)
    return 0


def cmd_presets(args) -> int:
    for name in preset_names():
        print(name)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="neural-oscillator",
                                description="Neural oscillator experiments and verification suites")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--scale", choices=("desk", "paper"), help="preset scale for case1/case2")
        sp.add_argument("--out", help="artifact directory")
        sp.add_argument("--override", action="append", metavar="KEY=VALUE",
                        help="section.key=value, value parsed as JSON when possible (repeatable)")
        sp.add_argument("--quiet", action="store_true", help="no progress log on stderr")

    r = sub.add_parser("run", help="run an experiment from a JSON config or preset name")
    r.add_argument("config")
    common(r)
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help=f"run a verification suite ({', '.join(SUITES)})")
    v.add_argument("suite")
    common(v)
    v.set_defaults(func=cmd_verify)

    pl = sub.add_parser("plot", help="log-log SVG of a CSV point table")
    pl.add_argument("table")
    pl.add_argument("out")
    pl.add_argument("--x", help="x column (default: first)")
    pl.add_argument("--y", help="y column (default: second)")
    pl.add_argument("--title")
    pl.add_argument("--reference-slope", type=float)
    pl.set_defaults(func=cmd_plot)

    ps = sub.add_parser("presets", help="list bundled presets")
    ps.set_defaults(func=cmd_presets)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
