"""Experiment configuration: dataclasses, YAML round-trip and validation."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .models import SymMatrix

EXPERIMENTS = ("fig1", "fig2", "fig3", "fpe-thm1", "fpe-thm2", "temp-check", "bnn", "pmf", "custom")
SAMPLERS = ("hmc", "naive-sghmc", "sghmc", "sgld", "sgd", "sgd-momentum", "momentum-form")
MODELS = ("double-well", "quadratic", "correlated-gaussian", "gaussian", "blobs", "ratings")

# Experiments that only make sense for a particular family of models.
_MODEL_FAMILIES = {
    "fig1": ("double-well",),
    "fig2": ("quadratic",),
    "fig3": ("correlated-gaussian", "gaussian"),
    "fpe-thm1": ("quadratic", "double-well"),
    "fpe-thm2": ("quadratic", "double-well"),
    "temp-check": ("quadratic",),
    "bnn": ("blobs",),
    "pmf": ("ratings",),
    "custom": ("double-well", "quadratic", "correlated-gaussian", "gaussian"),
}
_APPLICATION_SAMPLERS = ("sgd", "sgd-momentum", "sgld", "sghmc")


@dataclass
class SamplerSpec:
    """One sampler variant. Unused fields are ignored by the sampler kind."""

    kind: str
    label: str = ""
    epsilon: float = 0.1
    m: int = 1
    mh: bool = True
    mass: object = 1.0
    C: object = 1.0
    B_hat: object = 0.0
    resample_every: int | None = None
    eta: float | None = None
    alpha: float = 0.01
    beta_hat: float = 0.0

    def __post_init__(self):
        if not self.label:
            self.label = self.kind


@dataclass
class ModelSpec:
    name: str
    params: dict = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int | None
    model: ModelSpec
    samplers: list = field(default_factory=list)
    n_samples: int = 10_000
    burn_in: int = 0
    n_chains: int = 1
    noise_var: object = 0.0
    output_dir: str | None = None
    params: dict = field(default_factory=dict)
    notes: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        return _plain(d)

    def digest(self) -> str:
        return hashlib.sha256(serialize(self).encode()).hexdigest()


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def from_dict(d: dict) -> ExperimentConfig:
    if not isinstance(d, dict):
        raise ValueError("configuration must be a mapping")
    d = dict(d)
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
    model = d.pop("model", None) or {}
    if isinstance(model, str):
        model = {"name": model}
    samplers = d.pop("samplers", None) or []
    spec_fields = {f.name for f in fields(SamplerSpec)}
    specs = []
    for s in samplers:
        bad = set(s) - spec_fields
        if bad:
            raise ValueError(f"unknown sampler keys: {sorted(bad)}")
        specs.append(SamplerSpec(**s))
    experiment = d.pop("experiment", None)
    seed = d.pop("seed", None)
    return ExperimentConfig(experiment=experiment, seed=seed,
                            model=ModelSpec(model.get("name", ""), dict(model.get("params") or {})),
                            samplers=specs, **d)


def parse(text: str) -> ExperimentConfig:
    return from_dict(yaml.safe_load(text))


def serialize(config: ExperimentConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False, default_flow_style=None)


def load(path) -> ExperimentConfig:
    return parse(Path(path).read_text())


def preset_names() -> list[str]:
    root = resources.files("sghmc") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_preset(name: str) -> ExperimentConfig:
    root = resources.files("sghmc") / "presets"
    path = root / f"{name}.yaml"
    if not path.is_file():
        raise KeyError(f"no preset named {name!r}; available: {preset_names()}")
    return parse(path.read_text())


def resolve(name_or_path: str) -> ExperimentConfig:
    """Load ``name_or_path`` as a file when it exists, otherwise as a preset name."""
    p = Path(name_or_path)
    if p.is_file():
        return load(p)
    return load_preset(name_or_path)


def _psd(value) -> bool:
    try:
        return SymMatrix.coerce(value).is_psd()
    except (TypeError, ValueError):
        return False


def _positive(x) -> bool:
    try:
        return bool(np.all(np.asarray(x, dtype=float) > 0))
    except (TypeError, ValueError):
        return False


def validate(config: ExperimentConfig) -> list[str]:
    """Every reason ``run`` would refuse ``config``; empty when it is runnable."""
    v = []
    if config.experiment not in EXPERIMENTS:
        v.append(f"unknown experiment id {config.experiment!r}")
    if config.seed is None:
        v.append("seed is mandatory")
    elif not isinstance(config.seed, int) or isinstance(config.seed, bool) or config.seed < 0:
        v.append("seed must be a non-negative integer")
    if not isinstance(config.n_samples, int) or config.n_samples < 1:
        v.append("n_samples must be a positive integer")
    if not isinstance(config.burn_in, int) or config.burn_in < 0:
        v.append("burn_in must be a non-negative integer")
    if not isinstance(config.n_chains, int) or config.n_chains < 1:
        v.append("n_chains must be a positive integer")
    elif isinstance(config.n_samples, int) and config.n_samples % config.n_chains:
        v.append("n_samples must be divisible by n_chains")
    if config.model.name not in MODELS:
        v.append(f"unknown model {config.model.name!r}")
    elif config.experiment in _MODEL_FAMILIES and config.model.name not in _MODEL_FAMILIES[config.experiment]:
        v.append(f"model {config.model.name!r} is not valid for experiment {config.experiment!r}")
    if not _psd(config.noise_var):
        v.append("gradient noise covariance is not PSD")
    needs_samplers = config.experiment in ("fig1", "fig2", "fig3", "bnn", "pmf", "custom")
    if needs_samplers and not config.samplers:
        v.append("experiment needs at least one sampler")
    labels = [s.label for s in config.samplers]
    if len(set(labels)) != len(labels):
        v.append("sampler labels must be unique")
    for s in config.samplers:
        v.extend(f"sampler {s.label!r}: {msg}" for msg in _validate_sampler(s, config.experiment))
    return v


def _validate_sampler(s: SamplerSpec, experiment: str) -> list[str]:
    v = []
    if s.kind not in SAMPLERS:
        return [f"unknown sampler kind {s.kind!r}"]
    if experiment in ("bnn", "pmf") and s.kind not in _APPLICATION_SAMPLERS:
        v.append(f"sampler kind {s.kind!r} is not available for {experiment}")
    if s.kind in ("hmc", "naive-sghmc", "sghmc"):
        if not _positive(s.epsilon):
            v.append("epsilon must be positive")
        if not isinstance(s.m, int) or s.m < 1:
            v.append("m must be a positive integer")
        if s.resample_every is not None and (not isinstance(s.resample_every, int) or s.resample_every < 1):
            v.append("resample_every must be a positive integer")
        try:
            from .models import MassMatrix
            MassMatrix.coerce(s.mass)
        except (TypeError, ValueError):
            v.append("mass matrix must be positive definite")
    if s.kind == "sghmc" and experiment not in ("bnn", "pmf"):
        if not _psd(s.C):
            v.append("friction C is not PSD")
        if isinstance(s.B_hat, str):
            if s.B_hat != "fisher":
                v.append(f"unknown noise estimate {s.B_hat!r}")
        elif not _psd(s.B_hat):
            v.append("noise estimate B_hat is not PSD")
        elif _psd(s.C) and not (SymMatrix.coerce(s.C) - SymMatrix.coerce(s.B_hat)).is_psd():
            v.append("friction minus noise estimate not PSD")
    if s.kind in ("sgld", "sgd", "sgd-momentum", "momentum-form") or experiment in ("bnn", "pmf"):
        eta = s.eta if s.eta is not None else s.epsilon
        if not _positive(eta):
            v.append("eta must be positive")
    if s.kind in ("sgd-momentum", "momentum-form") or (s.kind == "sghmc" and experiment in ("bnn", "pmf")):
        if not (np.all(np.asarray(s.alpha, dtype=float) >= 0)):
            v.append("alpha must be non-negative")
        if np.any(np.asarray(s.beta_hat, dtype=float) < 0):
            v.append("beta_hat must be non-negative")
        elif np.any(np.asarray(s.alpha, dtype=float) < np.asarray(s.beta_hat, dtype=float)):
            v.append("friction minus noise estimate not PSD")
    return v
