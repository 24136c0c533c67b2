"""Desk-scale Bayesian applications: a one-hidden-layer classifier and matrix factorization.

Both models expose a flat parameter vector so that every sampler in
:mod:`sghmc.samplers` can drive them, minibatch gradient oracles through
:class:`~sghmc.models.MinibatchGradient`, and Gibbs updates for the
per-block prior precisions.

Prior convention. Each weight block ``w`` carries the prior
``p(w | lam) = (lam / pi)^{n_w / 2} exp(-lam ||w||^2)``, i.e. a Gaussian
with variance ``1 / (2 lam)``. With a ``Gamma(alpha, beta)`` hyperprior the
conditional posterior is therefore ``Gamma(alpha + n_w / 2, beta + ||w||^2)``.
The more common ``N(0, 1 / lam)`` convention gives rate ``beta + ||w||^2 / 2``
and is available through ``convention="gaussian"``.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit, log_softmax, softmax

from .errors import ConfigurationError, DivergenceError, EmptyDatasetError
from .models import DatasetModel, MinibatchGradient
from .rng import make_rng, streams
from .samplers import (MomentumFormConfig, momentum_form_step, sgd_momentum_step, sgd_step,
                       sgld_step)

CONVENTIONS = ("exp-sq", "gaussian")


def gibbs_lambda(weights, prior_shape: float = 1.0, prior_rate: float = 1.0, rng=None,
                 convention: str = "exp-sq") -> float:
    """Draw a block precision from its gamma conditional posterior.

    ``convention="exp-sq"`` matches the prior ``exp(-lam ||w||^2)`` and uses
    rate ``prior_rate + ||w||^2``; ``"gaussian"`` matches ``N(0, 1/lam)`` and
    uses ``prior_rate + ||w||^2 / 2``. Shape is ``prior_shape + n_w / 2``.
    """
    shape, rate = gamma_posterior(weights, prior_shape, prior_rate, convention)
    return float(make_rng(rng).gamma(shape, 1.0 / rate))


def gamma_posterior(weights, prior_shape: float = 1.0, prior_rate: float = 1.0,
                    convention: str = "exp-sq"):
    """``(shape, rate)`` of the conditional posterior used by :func:`gibbs_lambda`."""
    if convention not in CONVENTIONS:
        raise ConfigurationError(f"unknown prior convention {convention!r}")
    if prior_shape <= 0 or prior_rate <= 0:
        raise ConfigurationError("gamma hyperprior parameters must be positive")
    w = np.asarray(weights, dtype=float).ravel()
    if not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite")
    sq = float(w @ w)
    if convention == "gaussian":
        sq *= 0.5
    return prior_shape + 0.5 * w.size, prior_rate + sq


class _BlockPrior:
    """Shared bookkeeping for models whose parameters split into named blocks."""

    blocks: dict

    def _init_blocks(self, sizes: dict, lambdas):
        self.blocks = {}
        start = 0
        for name, shape in sizes.items():
            n = int(np.prod(shape))
            self.blocks[name] = (slice(start, start + n), shape)
            start += n
        self.dim = start
        lam = np.broadcast_to(np.asarray(lambdas, dtype=float), (len(sizes),)).copy()
        if np.any(lam <= 0):
            raise ConfigurationError("prior precisions must be positive")
        self.lambdas = lam
        self._lam_vec = np.empty(self.dim)
        self._refresh_lambdas()

    def _refresh_lambdas(self):
        for k, (sl, _) in enumerate(self.blocks.values()):
            self._lam_vec[sl] = self.lambdas[k]

    def set_lambdas(self, lambdas):
        lam = np.asarray(lambdas, dtype=float)
        if lam.shape != self.lambdas.shape or np.any(lam <= 0):
            raise ConfigurationError("prior precisions must be positive, one per block")
        self.lambdas = lam.copy()
        self._refresh_lambdas()

    def unpack(self, theta) -> dict:
        theta = np.asarray(theta, dtype=float)
        return {name: theta[..., sl].reshape(theta.shape[:-1] + shape)
                for name, (sl, shape) in self.blocks.items()}

    def pack(self, **parts) -> np.ndarray:
        out = np.empty(self.dim)
        for name, (sl, shape) in self.blocks.items():
            out[sl] = np.broadcast_to(parts[name], shape).ravel()
        return out

    def prior_potential(self, theta):
        return np.sum(self._lam_vec * np.asarray(theta) ** 2, axis=-1)

    def prior_grad(self, theta):
        return 2.0 * self._lam_vec * np.asarray(theta)

    def gibbs_update(self, theta, rng, prior_shape=1.0, prior_rate=1.0, convention="exp-sq"):
        """Resample every block precision given the current weights."""
        parts = self.unpack(theta)
        self.set_lambdas([gibbs_lambda(parts[name], prior_shape, prior_rate, rng, convention)
                          for name in self.blocks])
        return self.lambdas


# -- classifier ------------------------------------------------------------

@dataclass
class BnnParams:
    """Weights of ``P(y = k | x) ~ exp(A_k . sigmoid(B^T x + b) + a_k)``."""

    A: np.ndarray
    B: np.ndarray
    a: np.ndarray
    b: np.ndarray
    lambdas: np.ndarray = field(default_factory=lambda: np.ones(4))

    def __post_init__(self):
        if np.any(np.asarray(self.lambdas) <= 0):
            raise ConfigurationError("prior precisions must be positive")
        for w in (self.A, self.B, self.a, self.b):
            if not np.all(np.isfinite(w)):
                raise ValueError("weights must be finite")


class BnnModel(_BlockPrior, DatasetModel):
    """One-hidden-layer sigmoid network with a softmax output.

    Parameter blocks, in flat order: ``A`` (K x h), ``B`` (d x h), ``a`` (K),
    ``b`` (h). Labels are integers in ``[0, K)``.
    """

    name = "bnn"

    def __init__(self, X, y, n_classes: int | None = None, hidden: int = 25, lambdas=1.0):
        self.X = np.atleast_2d(np.asarray(X, dtype=float))
        self.y = np.asarray(y).astype(int).reshape(-1)
        if self.X.shape[0] != self.y.shape[0]:
            raise ConfigurationError("X and y disagree on the number of examples")
        self.n_classes = int(n_classes if n_classes is not None else self.y.max() + 1)
        _check_labels(self.y, self.n_classes)
        self.n_data, self.n_features = self.X.shape
        self.hidden = int(hidden)
        K, d, h = self.n_classes, self.n_features, self.hidden
        self._init_blocks({"A": (K, h), "B": (d, h), "a": (K,), "b": (h,)}, lambdas)

    def params(self, theta) -> BnnParams:
        p = self.unpack(theta)
        return BnnParams(p["A"], p["B"], p["a"], p["b"], self.lambdas.copy())

    def init_params(self, rng, scale: float = 0.1) -> np.ndarray:
        return scale * make_rng(rng).standard_normal(self.dim)

    def _forward(self, theta, X):
        p = self.unpack(theta)
        hid = expit(X @ p["B"] + p["b"])
        logits = hid @ p["A"].T + p["a"]
        return p, hid, logits

    def predict_proba(self, theta, X=None) -> np.ndarray:
        X = self.X if X is None else np.atleast_2d(X)
        return softmax(self._forward(theta, X)[2], axis=-1)

    def batch_nll(self, theta, X, y) -> float:
        logits = self._forward(theta, X)[2]
        return float(-np.sum(log_softmax(logits, axis=-1)[np.arange(len(y)), y]))

    def batch_grad(self, theta, X, y, per_example: bool = False):
        """Gradient of the summed negative log-likelihood over ``(X, y)``."""
        p, hid, logits = self._forward(theta, X)
        delta = softmax(logits, axis=-1)
        delta[np.arange(len(y)), y] -= 1.0
        dz = (delta @ p["A"]) * hid * (1.0 - hid)
        if per_example:
            n = len(y)
            parts = {"A": delta[:, :, None] * hid[:, None, :], "B": X[:, :, None] * dz[:, None, :],
                     "a": delta, "b": dz}
            return np.concatenate([parts[k].reshape(n, -1) for k in self.blocks], axis=1)
        return self.pack(A=delta.T @ hid, B=X.T @ dz, a=delta.sum(0), b=dz.sum(0))

    def data_potential(self, theta, idx):
        return self.batch_nll(theta, self.X[idx], self.y[idx])

    def data_grad(self, theta, idx):
        return self.batch_grad(theta, self.X[idx], self.y[idx])

    def example_grads(self, theta, idx):
        return self.batch_grad(theta, self.X[idx], self.y[idx], per_example=True)


def _check_labels(y, n_classes):
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")


def bnn_minibatch_grad(model: BnnModel, theta, X_batch, y_batch, dataset_size: int | None = None):
    """``(N / n) * grad NLL(batch) + grad prior`` for an explicit labeled batch."""
    X_batch = np.atleast_2d(np.asarray(X_batch, dtype=float))
    y_batch = np.asarray(y_batch).astype(int).reshape(-1)
    if y_batch.size == 0:
        raise EmptyDatasetError("empty minibatch")
    _check_labels(y_batch, model.n_classes)
    n_total = model.n_data if dataset_size is None else dataset_size
    return (n_total / y_batch.size) * model.batch_grad(theta, X_batch, y_batch) + model.prior_grad(theta)


@dataclass
class ClassificationData:
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    n_classes: int


def make_blobs(n_train: int = 5000, n_test: int = 1000, dim: int = 20, n_classes: int = 3,
               clusters_per_class: int = 3, separation: float = 2.0, seed=0) -> ClassificationData:
    """Unit-covariance Gaussian clusters, ``clusters_per_class`` per label.

    Cluster means are drawn ``N(0, (2 separation)^2 / dim * I)``. With more
    than one cluster per class the Bayes decision boundary is nonlinear.
    Cluster (and hence label) frequencies are balanced up to rounding.
    """
    rng = make_rng(seed)
    n_clusters = n_classes * clusters_per_class
    means = rng.standard_normal((n_clusters, dim)) * 2.0 * separation / np.sqrt(dim)
    n = n_train + n_test
    cluster = rng.permutation(np.arange(n) % n_clusters)
    y = cluster % n_classes
    X = means[cluster] + rng.standard_normal((n, dim))
    return ClassificationData(X[:n_train], y[:n_train], X[n_train:], y[n_train:], n_classes)


def load_idx(path) -> np.ndarray:
    """Read an IDX array file (optionally gzip-compressed)."""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        raw = fh.read()
    zero, dtype_code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0:
        raise ValueError(f"{path} is not an IDX file")
    dtypes = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}
    if dtype_code not in dtypes:
        raise ValueError(f"unsupported IDX element type 0x{dtype_code:02x}")
    shape = struct.unpack(">" + "I" * ndim, raw[4:4 + 4 * ndim])
    data = np.frombuffer(raw, dtype=dtypes[dtype_code], offset=4 + 4 * ndim)
    return data.reshape(shape)


# -- matrix factorization ----------------------------------------------------

@dataclass
class PmfParams:
    U: np.ndarray
    V: np.ndarray
    a: np.ndarray
    b: np.ndarray
    lambdas: np.ndarray = field(default_factory=lambda: np.ones(4))
    tau: float = 1.0

    def __post_init__(self):
        if np.any(np.asarray(self.lambdas) <= 0) or not self.tau > 0:
            raise ConfigurationError("precisions must be positive")


@dataclass
class Ratings:
    users: np.ndarray
    items: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.users = np.asarray(self.users, dtype=int)
        self.items = np.asarray(self.items, dtype=int)
        self.values = np.asarray(self.values, dtype=float)
        if not (self.users.shape == self.items.shape == self.values.shape):
            raise ValueError("rating columns differ in length")

    def __len__(self):
        return self.values.size

    def subset(self, idx) -> "Ratings":
        return Ratings(self.users[idx], self.items[idx], self.values[idx])


class PmfModel(_BlockPrior, DatasetModel):
    """``Y_ij ~ N(U_i . V_j + a_i + b_j, 1 / tau)`` with block priors on ``U, V, a, b``.

    ``U`` is stored as ``n_users x rank`` and ``V`` as ``n_items x rank``.
    """

    name = "pmf"

    def __init__(self, ratings: Ratings, n_users: int, n_items: int, rank: int = 5,
                 tau: float = 1.0, lambdas=1.0):
        if not tau > 0:
            raise ConfigurationError("rating precision must be positive")
        self.ratings = ratings
        self.n_users, self.n_items, self.rank = int(n_users), int(n_items), int(rank)
        _check_indices(ratings, self.n_users, self.n_items)
        self.n_data = len(ratings)
        self.tau = float(tau)
        self._init_blocks({"U": (self.n_users, rank), "V": (self.n_items, rank),
                           "a": (self.n_users,), "b": (self.n_items,)}, lambdas)

    def params(self, theta) -> PmfParams:
        p = self.unpack(theta)
        return PmfParams(p["U"], p["V"], p["a"], p["b"], self.lambdas.copy(), self.tau)

    def init_params(self, rng, scale: float = 0.1) -> np.ndarray:
        return scale * make_rng(rng).standard_normal(self.dim)

    def predict(self, theta, users, items) -> np.ndarray:
        p = self.unpack(theta)
        return (np.sum(p["U"][users] * p["V"][items], axis=-1)
                + p["a"][users] + p["b"][items])

    def _residual(self, theta, batch: Ratings):
        return batch.values - self.predict(theta, batch.users, batch.items)

    def batch_grad(self, theta, batch: Ratings) -> np.ndarray:
        """Gradient of ``tau/2 * sum (y - prediction)^2`` over ``batch``."""
        p = self.unpack(theta)
        res = -self.tau * self._residual(theta, batch)
        gU = np.zeros_like(p["U"])
        gV = np.zeros_like(p["V"])
        ga = np.zeros(self.n_users)
        gb = np.zeros(self.n_items)
        np.add.at(gU, batch.users, res[:, None] * p["V"][batch.items])
        np.add.at(gV, batch.items, res[:, None] * p["U"][batch.users])
        np.add.at(ga, batch.users, res)
        np.add.at(gb, batch.items, res)
        return self.pack(U=gU, V=gV, a=ga, b=gb)

    def data_potential(self, theta, idx):
        return 0.5 * self.tau * float(np.sum(self._residual(theta, self.ratings.subset(idx)) ** 2))

    def data_grad(self, theta, idx):
        return self.batch_grad(theta, self.ratings.subset(idx))

    def example_grads(self, theta, idx):
        idx = np.asarray(idx)
        return np.stack([self.batch_grad(theta, self.ratings.subset(idx[k:k + 1]))
                         for k in range(idx.size)])


def _check_indices(r: Ratings, n_users, n_items):
    if len(r) and (r.users.min() < 0 or r.users.max() >= n_users
                   or r.items.min() < 0 or r.items.max() >= n_items):
        raise ValueError("rating references a user or item outside the model")


def pmf_minibatch_grad(model: PmfModel, theta, batch: Ratings, total_ratings: int | None = None):
    """``(N / n) * grad of the batch likelihood + grad prior``."""
    if len(batch) == 0:
        raise EmptyDatasetError("empty rating batch")
    _check_indices(batch, model.n_users, model.n_items)
    n_total = model.n_data if total_ratings is None else total_ratings
    return (n_total / len(batch)) * model.batch_grad(theta, batch) + model.prior_grad(theta)


def pmf_rmse(model: PmfModel, thetas, heldout: Ratings) -> float:
    """RMSE of the prediction averaged over ``thetas`` (one vector or a stack)."""
    if len(heldout) == 0:
        raise EmptyDatasetError("held-out set is empty")
    thetas = np.atleast_2d(thetas)
    pred = np.mean([model.predict(t, heldout.users, heldout.items) for t in thetas], axis=0)
    return float(np.sqrt(np.mean((pred - heldout.values) ** 2)))


@dataclass
class RatingData:
    train: Ratings
    test: Ratings
    n_users: int
    n_items: int


def make_ratings(n_users: int = 200, n_items: int = 100, rank: int = 5, density: float = 0.1,
                 tau: float = 1.0, test_fraction: float = 0.2, seed=0) -> RatingData:
    """Low-rank ratings ``U_i . V_j + noise`` observed on a random subset of cells.

    Latent entries are standard normal, so a noiseless rating has variance
    ``rank``; the noise has precision ``tau``.
    """
    rng = make_rng(seed)
    U = rng.standard_normal((n_users, rank))
    V = rng.standard_normal((n_items, rank))
    n_obs = int(round(density * n_users * n_items))
    cells = rng.choice(n_users * n_items, size=n_obs, replace=False)
    users, items = np.divmod(cells, n_items)
    values = np.sum(U[users] * V[items], axis=1) + rng.standard_normal(n_obs) / np.sqrt(tau)
    n_test = int(round(test_fraction * n_obs))
    all_r = Ratings(users, items, values)
    return RatingData(all_r.subset(slice(n_test, None)), all_r.subset(slice(0, n_test)),
                      n_users, n_items)


def load_ratings(path) -> Ratings:
    """Read ``user,item,rating`` CSV or ``user::item::rating::time`` rows.

    Ids are remapped to consecutive 0-based integers in order of appearance.
    """
    users, items, values = [], [], []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = line.split("::") if "::" in line else line.split(",")
            try:
                values.append(float(parts[2]))
            except ValueError:
                if not users:
                    continue  # header row
                raise
            users.append(parts[0])
            items.append(parts[1])
    _, u = np.unique(users, return_inverse=True)
    _, i = np.unique(items, return_inverse=True)
    return Ratings(u, i, np.array(values))


# -- training loops ------------------------------------------------------------

METHODS = ("sgd", "sgd_momentum", "sgld", "sghmc")


@dataclass(frozen=True)
class RunConfig:
    """Settings shared by the application runs.

    ``eta`` is the learning rate, ``alpha`` the momentum decay and
    ``beta_hat`` the noise estimate (momentum form). ``burn_in`` counts kept
    samples (one per ``sample_every`` minibatch steps) discarded before
    averaging predictions. Sampling methods resample the block precisions
    once per epoch when ``gibbs`` is set.
    """

    method: str = "sghmc"
    eta: float = 1e-5
    alpha: float = 0.01
    beta_hat: float = 0.0
    batch_size: int = 500
    n_epochs: int = 20
    sample_every: int = 1
    burn_in: int = 50
    gibbs: bool = True
    prior_shape: float = 1.0
    prior_rate: float = 1.0
    convention: str = "exp-sq"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}; choose from {METHODS}")
        if not self.eta > 0:
            raise ConfigurationError("eta must be positive")
        if self.n_epochs < 1 or self.batch_size < 1 or self.sample_every < 1 or self.burn_in < 0:
            raise ConfigurationError("epochs, batch size and sample spacing must be positive")

    @property
    def is_sampler(self) -> bool:
        return self.method in ("sgld", "sghmc")


@dataclass
class RunResult:
    """Kept samples (after burn-in) and one evaluation per epoch."""

    samples: np.ndarray
    trace: np.ndarray
    lambdas: np.ndarray
    final: np.ndarray
    error: str | None = None


def _run(model, config: RunConfig, evaluate, seed, theta0=None) -> RunResult:
    """Shared loop; ``evaluate(point, running_mean_state)`` scores one epoch."""
    rngs = streams(seed, "init", "batch", "noise", "gibbs")
    rng = rngs["noise"]
    oracle = MinibatchGradient(model, min(config.batch_size, model.n_data), rng=rngs["batch"])
    theta = model.init_params(rngs["init"]) if theta0 is None else np.array(theta0, dtype=float)
    v = np.zeros_like(theta)
    mf = MomentumFormConfig(config.eta, config.alpha, config.beta_hat) if config.method == "sghmc" else None
    steps = max(oracle.batches_per_epoch, 1)
    kept, trace, lambdas = [], [], []
    n_seen = 0
    acc = None
    error = None
    for epoch in range(config.n_epochs):
        try:
            for _ in range(steps):
                if config.method == "sgd":
                    theta = sgd_step(theta, config.eta, oracle)
                elif config.method == "sgd_momentum":
                    theta, v = sgd_momentum_step(theta, v, config.eta, config.alpha, oracle)
                elif config.method == "sgld":
                    theta = sgld_step(theta, config.eta, oracle, rng)
                else:
                    theta, v = momentum_form_step(theta, v, mf, oracle, rng)
                n_seen += 1
                if config.is_sampler and n_seen % config.sample_every == 0:
                    idx = n_seen // config.sample_every
                    if idx > config.burn_in:
                        kept.append(theta.copy())
                        acc = evaluate.accumulate(acc, theta)
        except DivergenceError as exc:
            error = f"diverged in epoch {epoch}: {exc}"
            break
        if config.is_sampler and config.gibbs:
            model.gibbs_update(theta, rngs["gibbs"], config.prior_shape, config.prior_rate,
                               config.convention)
        lambdas.append(model.lambdas.copy())
        trace.append(evaluate.score(acc if acc is not None else evaluate.accumulate(None, theta)))
    samples = np.array(kept) if kept else np.empty((0, model.dim))
    result = RunResult(samples, np.array(trace), np.array(lambdas), theta, error)
    if error is not None:
        raise DivergenceError(error, state=theta, chain=result)
    return result


class _ClassifierScore:
    def __init__(self, model: BnnModel, X, y):
        self.model, self.X, self.y = model, X, y

    def accumulate(self, acc, theta):
        prob = self.model.predict_proba(theta, self.X)
        if acc is None:
            return [prob, 1]
        acc[0] += prob
        acc[1] += 1
        return acc

    def score(self, acc):
        prob = acc[0] / acc[1]
        return float(np.mean(np.argmax(prob, axis=1) != self.y))


class _RatingScore:
    def __init__(self, model: PmfModel, heldout: Ratings):
        self.model, self.heldout = model, heldout

    def accumulate(self, acc, theta):
        pred = self.model.predict(theta, self.heldout.users, self.heldout.items)
        if acc is None:
            return [pred, 1]
        acc[0] += pred
        acc[1] += 1
        return acc

    def score(self, acc):
        pred = acc[0] / acc[1]
        return float(np.sqrt(np.mean((pred - self.heldout.values) ** 2)))


def bnn_sampling_run(data: ClassificationData, config: RunConfig, hidden: int = 25,
                     seed=0, lambdas=1.0) -> RunResult:
    """Train or sample the classifier; ``trace`` holds the test error after each epoch.

    Sampling methods predict with the average of ``P(y|x)`` over kept
    samples; optimizers predict with their current point.
    """
    model = BnnModel(data.X_train, data.y_train, data.n_classes, hidden, lambdas)
    score = _ClassifierScore(model, data.X_test, data.y_test)
    return _run(model, config, score, seed)


def pmf_sampling_run(data: RatingData, config: RunConfig, rank: int = 5, tau: float = 1.0,
                     seed=0, lambdas=1.0) -> RunResult:
    """Train or sample the factorization; ``trace`` holds test RMSE after each epoch."""
    model = PmfModel(data.train, data.n_users, data.n_items, rank, tau, lambdas)
    score = _RatingScore(model, data.test)
    return _run(model, config, score, seed)
