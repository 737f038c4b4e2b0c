"""Command line entry point: ``radar-pho <stage> --config run.json``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import config as C
from .pipeline import STAGES, StageError, run_stage
from .scene import ConfigError


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="radar-pho", description=__doc__)
    ap.add_argument("stage", choices=(*STAGES, "all"))
    ap.add_argument("--config", required=True, help="run configuration (JSON)")
    ap.add_argument("--out", default="runs/default", help="output directory")
    ap.add_argument("--seed-override", type=int, default=None)
    ap.add_argument("--features-from", choices=("radar", "oracle"), default=None)
    ap.add_argument("--p-shift", type=float, default=None, help="one shift for every client")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = C.with_overrides(C.load(args.config), args.seed_override, args.features_from, args.p_shift)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        store = run_stage(args.stage, cfg, args.out)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(f"{args.stage}: done (config {store.hash}, seed {cfg.seed}) -> {store.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
