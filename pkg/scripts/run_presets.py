"""Run shipped presets through the harness and print their summary tables.

    python3 scripts/run_presets.py                 # every preset
    python3 scripts/run_presets.py fig1 fig3 --out runs
"""

import argparse
import csv
import logging
from pathlib import Path

from sghmc import config as cfg
from sghmc.harness import run


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("presets", nargs="*", help="preset names (default: all)")
    ap.add_argument("--out", default="runs", help="parent directory for run outputs")
    ap.add_argument("--seed", type=int, default=None, help="override the preset seed")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    names = args.presets or cfg.preset_names()
    for name in names:
        c = cfg.load_preset(name)
        if args.seed is not None:
            c.seed = args.seed
        out = Path(args.out) / name
        manifest = run(c, out)
        logging.info("== %s (%.1f s) -> %s", name, manifest["wall_time_s"], out)
        for f in manifest["files"]:
            if f["kind"] == "summary":
                with open(out / f["name"]) as fh:
                    for row in csv.reader(fh):
                        logging.info("   " + "  ".join(row))


if __name__ == "__main__":
    main()
