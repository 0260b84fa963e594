"""Command-line entry point: ``meanbased run | analyze | presets``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, DistributionConfig, load_config, parse_config
from .engine import default_workers
from .presets import describe, get_preset, preset_names
from .report import OutputError, default_out, erc_sweep, format_analysis, format_table, run_config


def _load(arg: str):
    """A config file, or a shipped preset referenced by name."""
    p = Path(arg)
    if p.exists() or arg.endswith(".json"):
        return load_config(p)
    name = arg[len("preset:"):] if arg.startswith("preset:") else arg
    try:
        return parse_config(get_preset(name), name)
    except KeyError:
        raise ConfigError("$", f"no config file or preset named {arg!r}") from None


def cmd_run(args) -> int:
    try:
        cfg = _load(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out) if args.out else default_out(cfg.name)
    workers = args.workers if args.workers is not None else default_workers()
    log = None if args.quiet else (lambda msg: print(msg, file=sys.stderr))
    try:
        run_config(cfg, out, seed=args.seed, timestamp=not args.no_timestamp, workers=workers, log=log)
    except OutputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        # mechanism preconditions that depend on T or the distribution
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if not args.quiet:
        print(f"wrote {out}", file=sys.stderr)
    return 0


def cmd_analyze(args) -> int:
    if args.erc:
        H_arg, m_arg = args.erc
        try:
            Hs = [float(h) for h in H_arg.split(",")]
            m = int(m_arg)
            rows = erc_sweep(Hs, m)
        except ValueError as exc:
            print(f"error: --erc: {exc}", file=sys.stderr)
            return 2
        print(format_table(rows))
        return 0
    if not args.dist:
        print("error: give a distribution file or --erc H m", file=sys.stderr)
        return 2
    try:
        doc = json.loads(Path(args.dist).read_text())
        dist = DistributionConfig.from_dict(doc).build(normalize=False)
    except OSError as exc:
        print(f"error: cannot read {args.dist}: {exc.strerror}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(f"error: invalid JSON: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(format_analysis(dist))
    return 0


def cmd_presets(args) -> int:
    if args.action == "list":
        for name in preset_names():
            print(f"{name:26s} {describe(name)}")
        return 0
    if not args.name:
        print("error: presets show needs a name", file=sys.stderr)
        return 2
    try:
        print(json.dumps(get_preset(args.name), indent=2))
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return 2
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="meanbased", description="Repeated-auction simulations against mean-based buyers.")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a config file or named preset")
    r.add_argument("config", help="path to a JSON config, or a preset name")
    r.add_argument("--out", help="output directory (default: $MEANBASED_OUT or results/<name>)")
    r.add_argument("--seed", type=int, help="override engine.seed of every experiment")
    r.add_argument("--workers", type=int, help="trial worker processes (default: $MEANBASED_WORKERS or CPU count)")
    r.add_argument("--no-timestamp", action="store_true", help="omit the timestamp header line from CSV files")
    r.add_argument("-q", "--quiet", action="store_true")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("analyze", help="revenue benchmarks of a distribution")
    a.add_argument("dist", nargs="?", help="distribution JSON file")
    a.add_argument("--erc", nargs=2, metavar=("H", "M"),
                   help="equal-revenue sweep; H may be a comma list, e.g. 10,100,1000")
    a.set_defaults(func=cmd_analyze)

    p = sub.add_parser("presets", help="list or show shipped presets")
    p.add_argument("action", choices=["list", "show"])
    p.add_argument("name", nargs="?")
    p.set_defaults(func=cmd_presets)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
