"""Step-size grid for the BNN and PMF presets.

Each method in the preset is re-run over a grid of learning rates (scaled
around the preset value) on a few seeds, and the final held-out metric is
reported as mean and standard error. The preset values are the per-method
minimum of this grid.

    python3 scripts/calibrate_applications.py bnn --seeds 3
    python3 scripts/calibrate_applications.py pmf --scales 0.3 1 3 --epochs 300
"""

import argparse
import dataclasses
import warnings

import numpy as np

from sghmc import bayes
from sghmc import config as cfg
from sghmc.errors import DivergenceError
from sghmc.experiments import _app_config


def load_data(c):
    mp = dict(c.model.params)
    data_seed = mp.pop("data_seed", 0)
    if c.experiment == "bnn":
        hidden = int(mp.pop("hidden", 25))
        data = bayes.make_blobs(seed=data_seed, **mp)
        return data, lambda d, rc, s: bayes.bnn_sampling_run(d, rc, hidden=hidden, seed=s)
    rank, tau = int(mp.get("rank", 5)), float(mp.get("tau", 1.0))
    data = bayes.make_ratings(seed=data_seed, **mp)
    return data, lambda d, rc, s: bayes.pmf_sampling_run(d, rc, rank=rank, tau=tau, seed=s)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("preset", choices=["bnn", "pmf"])
    ap.add_argument("--scales", type=float, nargs="+", default=[0.25, 0.5, 1.0, 2.0, 4.0])
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--epochs", type=int, default=None, help="override the preset epoch count")
    args = ap.parse_args()
    warnings.simplefilter("ignore", RuntimeWarning)

    c = cfg.load_preset(args.preset)
    if args.epochs:
        c.params["n_epochs"] = args.epochs
    data, runner = load_data(c)
    seeds = np.random.SeedSequence(c.seed).spawn(args.seeds)
    for spec in c.samplers:
        base = _app_config(spec, c)
        for scale in args.scales:
            rc = dataclasses.replace(base, eta=base.eta * scale)
            try:
                final = np.array([runner(data, rc, s).trace[-1] for s in seeds])
            except DivergenceError:
                print(f"{spec.label:>6} eta={rc.eta:.3g}: diverged")
                continue
            se = final.std(ddof=1) / np.sqrt(len(final)) if len(final) > 1 else 0.0
            print(f"{spec.label:>6} eta={rc.eta:.3g}: {final.mean():.4f} +- {se:.4f}", flush=True)


if __name__ == "__main__":
    main()
