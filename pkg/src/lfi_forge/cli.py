"""Command-line entry point: ``lfi-forge observe|run|aggregate|oracle``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from lfi_forge import experiments, oracles


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lfi-forge", description="Sequential BNN likelihood-free inference experiments")
    p.add_argument("command", choices=["observe", "run", "aggregate", "oracle"])
    p.add_argument("--config", type=Path, help="TOML experiment config")
    p.add_argument("--jobs", type=int, default=1, help="worker cap (results do not depend on it)")
    p.add_argument("--out", type=Path, help="output directory (overrides the config)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return 2

    if args.command == "oracle":
        return 0 if oracles.main_report(sys.stdout) else 1

    if args.command == "aggregate" and args.config is None:
        if args.out is None:
            print("error: aggregate needs --config or --out", file=sys.stderr)
            return 2
        out = args.out
    else:
        if args.config is None:
            print(f"error: {args.command} needs --config", file=sys.stderr)
            return 2
        try:
            cfg = experiments.load_config(args.config)
        except (experiments.ConfigError, OSError) as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
        out = args.out or Path(cfg.output)

    if args.command == "observe":
        path = experiments.observe(cfg, out)
        print(path)
        return 0
    if args.command == "run":
        manifest = experiments.run(cfg, out, jobs=args.jobs)
        print(out / "manifest.json")
        return 0 if manifest["status"] == "ok" else 1

    manifests = experiments.discover_manifests(out)
    if not manifests:
        print(f"error: no manifests under {out}", file=sys.stderr)
        return 2
    try:
        experiments.aggregate(manifests, out)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(out / "summary.csv")
    return 0


if __name__ == "__main__":
    sys.exit(main())
