"""Run a validated experiment configuration and record a manifest of its outputs."""

from __future__ import annotations

import hashlib
import json
import os
import platform
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy

from .config import ExperimentConfig, serialize, validate
from .errors import DivergenceError
from .experiments import RUNNERS, Outputs

OUT_ENV = "SGHMC_OUT"


class ValidationError(ValueError):
    """The configuration has one or more violations (listed in ``violations``)."""

    def __init__(self, violations):
        super().__init__("invalid configuration:\n  " + "\n  ".join(violations))
        self.violations = list(violations)


def default_output_dir(config: ExperimentConfig) -> Path:
    if config.output_dir:
        return Path(config.output_dir)
    return Path(os.environ.get(OUT_ENV, "results")) / config.experiment


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _version() -> str:
    try:
        from importlib.metadata import version
        return version("artifact")
    except Exception:  # package not installed (e.g. run from a source tree)
        return "unknown"


def run(config: ExperimentConfig, out_dir=None) -> dict:
    """Validate, run and write ``manifest.json`` next to the experiment's files.

    Raises :class:`ValidationError` before touching the filesystem when the
    config is invalid. A divergence leaves the files written so far plus a
    manifest with an ``error`` record, then re-raises.
    """
    violations = validate(config)
    if violations:
        raise ValidationError(violations)
    root = Path(out_dir) if out_dir is not None else default_output_dir(config)
    out = Outputs(root)
    (root / "config.yaml").write_text(serialize(config))
    out.files["config.yaml"] = "config"
    start = time.perf_counter()
    error = None
    try:
        RUNNERS[config.experiment](config, out)
    except DivergenceError as exc:
        error = {"type": "divergence", "message": str(exc), "step": exc.step}
    manifest = {
        "experiment": config.experiment,
        "config_sha256": config.digest(),
        "seed": config.seed,
        "n_samples": config.n_samples,
        "versions": {"package": _version(), "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "wall_time_s": round(time.perf_counter() - start, 3),
        "notes": config.notes,
        "files": [{"name": name, "kind": kind, "sha256": _sha256(root / name)}
                  for name, kind in sorted(out.files.items())],
        "error": error,
    }
    with open(root / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    if error is not None:
        raise DivergenceError(error["message"], step=error["step"])
    return manifest


def with_overrides(config: ExperimentConfig, seed=None, n_samples=None, out_dir=None) -> ExperimentConfig:
    changes = {}
    if seed is not None:
        changes["seed"] = seed
    if n_samples is not None:
        changes["n_samples"] = n_samples
    if out_dir is not None:
        changes["output_dir"] = str(out_dir)
    return replace(config, **changes)
