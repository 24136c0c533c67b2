"""Command-line entry point: ``sghmc run|validate|list-presets``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import config as cfg
from .errors import DivergenceError
from .harness import OUT_ENV, ValidationError, run, with_overrides

log = logging.getLogger("sghmc")

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sghmc", description="Run sampler experiments from YAML configs.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a preset or a config file")
    r.add_argument("target", help="preset name or path to a YAML config")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--out", default=None,
                   help=f"output directory (default: ${OUT_ENV}/<experiment> or results/<experiment>)")
    r.add_argument("--samples", type=int, default=None, help="override n_samples")
    v = sub.add_parser("validate", help="list every violation in a config")
    v.add_argument("target")
    sub.add_parser("list-presets", help="print the shipped preset names")
    return p


def _load(target):
    try:
        return cfg.resolve(target), None
    except (KeyError, ValueError, TypeError, OSError) as exc:
        return None, str(exc)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args = build_parser().parse_args(argv)
    if args.command == "list-presets":
        for name in cfg.preset_names():
            print(name)
        return EXIT_OK
    config, err = _load(args.target)
    if config is None:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    if args.command == "validate":
        violations = cfg.validate(config)
        for v in violations:
            print(v)
        if not violations:
            print("ok")
        return EXIT_INVALID if violations else EXIT_OK
    config = with_overrides(config, args.seed, args.samples, args.out)
    try:
        manifest = run(config)
    except ValidationError as exc:
        for v in exc.violations:
            print(v, file=sys.stderr)
        return EXIT_INVALID
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    log.info("%s finished in %.1fs; %d files", manifest["experiment"], manifest["wall_time_s"],
             len(manifest["files"]))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
