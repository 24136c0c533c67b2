"""Target distributions, mass matrices and gradient oracles.

Every array argument is vectorized over leading axes: a position of shape
``(..., d)`` yields a potential of shape ``(...)`` and a gradient of shape
``(..., d)``. Running many independent chains in lockstep is then just a
matter of passing a ``(n_chains, d)`` array.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError, EmptyDatasetError
from .rng import make_rng

_PSD_TOL = 1e-12


class SymMatrix:
    """Symmetric matrix stored as a scalar multiple of I, a diagonal, or dense.

    The cheap forms keep per-step costs at O(d) for the diagonal settings
    that large models use.
    """

    def __init__(self, value):
        a = np.asarray(value, dtype=float)
        if a.ndim == 0:
            self.kind = "scalar"
        elif a.ndim == 1:
            self.kind = "diag"
        elif a.ndim == 2 and a.shape[0] == a.shape[1]:
            if not np.allclose(a, a.T, rtol=1e-12, atol=1e-14):
                raise ConfigurationError("matrix is not symmetric")
            a = 0.5 * (a + a.T)
            self.kind = "dense"
        else:
            raise ConfigurationError(f"cannot interpret shape {a.shape} as a symmetric matrix")
        self.value = a
        self._factor = None

    @classmethod
    def coerce(cls, value) -> "SymMatrix":
        return value if isinstance(value, SymMatrix) else cls(value)

    def __repr__(self):
        return f"{type(self).__name__}({self.value.tolist()!r})"

    @property
    def dim(self):
        """Dimension, or None for the scalar form."""
        return None if self.kind == "scalar" else self.value.shape[0]

    @property
    def is_diagonal(self) -> bool:
        return self.kind != "dense"

    @property
    def is_zero(self) -> bool:
        return not np.any(self.value)

    def dense(self, d: int | None = None) -> np.ndarray:
        d = self.dim if d is None else d
        if self.kind == "scalar":
            return self.value * np.eye(d)
        if self.kind == "diag":
            return np.diag(self.value)
        return self.value

    def diagonal(self, d: int | None = None) -> np.ndarray:
        d = self.dim if d is None else d
        if self.kind == "scalar":
            return np.full(d, float(self.value))
        if self.kind == "diag":
            return self.value
        return np.diag(self.value).copy()

    def eigvals(self) -> np.ndarray:
        if self.kind == "dense":
            return np.linalg.eigvalsh(self.value)
        return np.atleast_1d(self.value)

    def is_psd(self, tol: float = _PSD_TOL) -> bool:
        ev = self.eigvals()
        scale = max(1.0, float(np.max(np.abs(ev))) if ev.size else 1.0)
        return bool(np.all(ev >= -tol * scale))

    def apply(self, x):
        """Return ``A @ x`` for ``x`` of shape ``(..., d)``."""
        if self.kind == "dense":
            return x @ self.value.T
        return self.value * x

    def __sub__(self, other):
        other = SymMatrix.coerce(other)
        if self.kind == "dense" or other.kind == "dense":
            d = self.dim or other.dim
            return SymMatrix(self.dense(d) - other.dense(d))
        if self.kind == "scalar" and other.kind == "scalar":
            return SymMatrix(self.value - other.value)
        d = self.dim or other.dim
        return SymMatrix(self.diagonal(d) - other.diagonal(d))

    def scaled(self, c: float) -> "SymMatrix":
        return SymMatrix(c * self.value)

    def factor(self):
        """A square root ``L`` with ``L L^T = A`` (same storage form).

        Dense matrices use a Cholesky factor, falling back to an eigenvector
        factor for singular positive semi-definite inputs. Computed once.
        """
        if self._factor is None:
            if not self.is_psd():
                raise ConfigurationError("matrix is not positive semi-definite")
            if self.kind != "dense":
                self._factor = np.sqrt(np.clip(self.value, 0.0, None))
            else:
                try:
                    self._factor = np.linalg.cholesky(self.value)
                except np.linalg.LinAlgError:
                    w, q = np.linalg.eigh(self.value)
                    self._factor = q * np.sqrt(np.clip(w, 0.0, None))
        return self._factor

    def apply_factor(self, z):
        """Map standard normal draws ``z`` to ``N(0, A)`` draws."""
        f = self.factor()
        if self.kind == "dense":
            return z @ f.T
        return f * z


class MassMatrix(SymMatrix):
    """Positive definite mass matrix ``M`` defining ``r ~ N(0, M)``."""

    def __init__(self, value=1.0):
        super().__init__(value)
        if self.kind == "dense":
            try:
                chol = np.linalg.cholesky(self.value)
            except np.linalg.LinAlgError as exc:
                raise ConfigurationError("dense mass matrix is not positive definite") from exc
            self._factor = chol
            self._inv = np.linalg.inv(self.value)
            self._inv = 0.5 * (self._inv + self._inv.T)
        else:
            if np.any(self.value <= 0):
                raise ConfigurationError("mass matrix entries must be positive")
            self._inv = 1.0 / self.value

    @classmethod
    def identity(cls, d: int | None = None) -> "MassMatrix":
        return cls(1.0) if d is None else cls(np.ones(d))

    @classmethod
    def coerce(cls, value) -> "MassMatrix":
        if value is None:
            return cls(1.0)
        if isinstance(value, MassMatrix):
            return value
        if isinstance(value, SymMatrix):
            return cls(value.value)
        return cls(value)

    def inv_apply(self, r):
        """Return ``M^{-1} r``."""
        if self.kind == "dense":
            return r @ self._inv.T
        return r * self._inv

    def inverse(self) -> SymMatrix:
        return SymMatrix(self._inv)

    def kinetic(self, r):
        """Kinetic energy ``r^T M^{-1} r / 2`` over the last axis."""
        return 0.5 * np.sum(r * self.inv_apply(r), axis=-1)

    def sample_momentum(self, rng, shape):
        return self.apply_factor(rng.standard_normal(shape))


def _as_positions(model, theta):
    theta = np.asarray(theta, dtype=float)
    if theta.ndim == 0 or theta.shape[-1] != model.dim:
        raise DimensionError(
            f"expected trailing dimension {model.dim}, got shape {theta.shape}"
        )
    return theta


class PotentialModel:
    """A target density ``exp(-U(theta))`` on ``R^dim``.

    Subclasses implement ``_potential`` and ``_grad`` on validated arrays.
    Instances are treated as immutable once built.
    """

    dim: int = 1
    name = "model"

    def potential(self, theta):
        return self._potential(_as_positions(self, theta))

    def grad(self, theta):
        return self._grad(_as_positions(self, theta))

    def density(self, theta):
        """Unnormalized target density."""
        return np.exp(-self.potential(theta))

    def _potential(self, theta):
        raise NotImplementedError

    def _grad(self, theta):
        raise NotImplementedError


class DoubleWell(PotentialModel):
    """``U(theta) = -2 theta^2 + theta^4``, a bimodal 1D target."""

    dim = 1
    name = "double-well"

    def _potential(self, theta):
        t = theta[..., 0]
        return -2.0 * t**2 + t**4

    def _grad(self, theta):
        return -4.0 * theta + 4.0 * theta**3


class Gaussian(PotentialModel):
    """Zero-mean Gaussian, ``U(theta) = theta^T cov^{-1} theta / 2``."""

    name = "gaussian"

    def __init__(self, cov):
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        if cov.shape[0] != cov.shape[1]:
            raise ConfigurationError("covariance must be square")
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ConfigurationError("covariance must be positive definite") from exc
        self.cov = cov
        self.dim = cov.shape[0]
        self.precision = np.linalg.inv(cov)
        self.precision = 0.5 * (self.precision + self.precision.T)

    def _potential(self, theta):
        return 0.5 * np.sum(theta * (theta @ self.precision), axis=-1)

    def _grad(self, theta):
        return theta @ self.precision


def quadratic(dim: int = 1) -> Gaussian:
    """Standard normal target, ``U = |theta|^2 / 2``."""
    g = Gaussian(np.eye(dim))
    g.name = "quadratic"
    return g


def correlated_gaussian(rho: float = 0.9) -> Gaussian:
    """Bivariate Gaussian with unit variances and correlation ``rho``."""
    g = Gaussian([[1.0, rho], [rho, 1.0]])
    g.name = "correlated-gaussian"
    return g


class DatasetModel(PotentialModel):
    """Posterior over i.i.d. data: ``U = -sum_i log p(x_i|theta) - log p(theta)``.

    Subclasses provide the per-datum likelihood terms through ``data_potential``
    and ``data_grad`` (summed over an index array) plus the prior terms.
    """

    n_data: int = 0

    def data_potential(self, theta, idx):
        raise NotImplementedError

    def data_grad(self, theta, idx):
        raise NotImplementedError

    def example_grads(self, theta, idx):
        """Per-example likelihood gradients, shape ``(len(idx), d)``."""
        raise NotImplementedError

    def prior_potential(self, theta):
        raise NotImplementedError

    def prior_grad(self, theta):
        raise NotImplementedError

    def _all(self):
        return np.arange(self.n_data)

    def _potential(self, theta):
        return self.data_potential(theta, self._all()) + self.prior_potential(theta)

    def _grad(self, theta):
        return self.data_grad(theta, self._all()) + self.prior_grad(theta)


class GaussianRegression(DatasetModel):
    """Bayesian linear regression ``y ~ N(X theta, noise_var)``, ``theta ~ N(0, prior_var I)``."""

    name = "gaussian-regression"

    def __init__(self, X, y, noise_var: float = 1.0, prior_var: float = 1.0):
        self.X = np.atleast_2d(np.asarray(X, dtype=float))
        self.y = np.asarray(y, dtype=float).reshape(-1)
        if self.X.shape[0] != self.y.shape[0]:
            raise ConfigurationError("X and y disagree on the number of examples")
        self.n_data, self.dim = self.X.shape
        self.noise_var = float(noise_var)
        self.prior_var = float(prior_var)

    def _residual(self, theta, idx):
        return self.y[idx] - theta @ self.X[idx].T

    def data_potential(self, theta, idx):
        res = self._residual(theta, idx)
        return 0.5 * np.sum(res**2, axis=-1) / self.noise_var

    def data_grad(self, theta, idx):
        return -(self._residual(theta, idx) @ self.X[idx]) / self.noise_var

    def example_grads(self, theta, idx):
        res = self._residual(theta, idx)
        return -res[..., :, None] * self.X[idx] / self.noise_var

    def prior_potential(self, theta):
        return 0.5 * np.sum(theta**2, axis=-1) / self.prior_var

    def prior_grad(self, theta):
        return theta / self.prior_var


def make_regression(n: int = 8, dim: int = 2, seed=0, noise_var: float = 1.0) -> GaussianRegression:
    """Small synthetic regression problem, handy for enumerating minibatches."""
    rng = make_rng(seed)
    X = rng.standard_normal((n, dim))
    theta = rng.standard_normal(dim)
    y = X @ theta + np.sqrt(noise_var) * rng.standard_normal(n)
    return GaussianRegression(X, y, noise_var=noise_var)


@dataclass
class PhaseState:
    """Position ``theta`` and momentum ``r`` (same shape)."""

    theta: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.r = np.asarray(self.r, dtype=float)
        if self.theta.shape != self.r.shape:
            raise DimensionError(
                f"theta {self.theta.shape} and r {self.r.shape} must have the same shape"
            )

    def copy(self) -> "PhaseState":
        return PhaseState(self.theta.copy(), self.r.copy())

    def flipped(self) -> "PhaseState":
        return PhaseState(self.theta.copy(), -self.r)


def potential_energy(model: PotentialModel, theta):
    return model.potential(theta)


def grad_exact(model: PotentialModel, theta):
    return model.grad(theta)


def hamiltonian(model: PotentialModel, state: PhaseState, mass=None):
    """Total energy ``U(theta) + r^T M^{-1} r / 2``."""
    mass = MassMatrix.coerce(mass)
    if state.r.shape[-1] != model.dim:
        raise DimensionError("momentum dimension does not match the model")
    if mass.dim is not None and mass.dim != model.dim:
        raise DimensionError("mass matrix dimension does not match the model")
    return model.potential(state.theta) + mass.kinetic(state.r)


class GradientOracle:
    """Callable returning a (possibly noisy) gradient of ``model.potential``.

    One oracle per chain: noisy oracles carry their own random stream.
    """

    def __init__(self, model: PotentialModel):
        self.model = model

    def __call__(self, theta):
        raise NotImplementedError


class ExactGradient(GradientOracle):
    def __call__(self, theta):
        return self.model.grad(theta)


class NoisyGradient(GradientOracle):
    """``grad U(theta) + N(0, V)`` with a fixed covariance ``V``.

    ``V`` may be a scalar, a diagonal vector or a dense PSD matrix; its square
    root is computed once here. A zero ``V`` returns the exact gradient
    untouched and draws nothing.
    """

    def __init__(self, model: PotentialModel, V, rng=None):
        super().__init__(model)
        self.V = SymMatrix.coerce(V)
        if self.V.dim is not None and self.V.dim != model.dim:
            raise ConfigurationError("noise covariance dimension does not match the model")
        if not self.V.is_psd():
            raise ConfigurationError("noise covariance V is not positive semi-definite")
        self.V.factor()
        self.rng = make_rng(rng)

    def __call__(self, theta):
        g = self.model.grad(theta)
        if self.V.is_zero:
            return g
        return g + self.V.apply_factor(self.rng.standard_normal(g.shape))


class MinibatchGradient(GradientOracle):
    """Minibatch estimate ``-(N/n) sum_{x in batch} grad log p(x|theta) - grad log p(theta)``.

    Batches are drawn without replacement from a shuffled epoch ordering
    (reshuffled whenever fewer than ``batch_size`` indices remain), or with
    replacement when ``with_replacement`` is set. With ``track_noise`` the
    oracle also keeps a windowed empirical-Fisher estimate of the diagonal of
    the gradient-noise covariance.
    """

    def __init__(self, model: DatasetModel, batch_size: int, rng=None,
                 with_replacement: bool = False, track_noise: bool = False,
                 window: int = 100):
        super().__init__(model)
        n = getattr(model, "n_data", 0)
        if batch_size < 1 or (n and batch_size > n):
            raise ConfigurationError(f"batch_size must lie in [1, {n}], got {batch_size}")
        self.batch_size = int(batch_size)
        self.with_replacement = with_replacement
        self.rng = make_rng(rng)
        self.track_noise = track_noise
        self._fisher = deque(maxlen=window)
        self._order = np.empty(0, dtype=int)
        self._pos = 0
        self.epoch = 0
        self.calls = 0

    @property
    def scale(self) -> float:
        return self.model.n_data / self.batch_size

    @property
    def batches_per_epoch(self) -> int:
        return self.model.n_data // self.batch_size

    def next_batch(self) -> np.ndarray:
        n = self.model.n_data
        if n == 0:
            raise EmptyDatasetError("cannot draw a minibatch from an empty dataset")
        if self.with_replacement:
            return self.rng.integers(0, n, size=self.batch_size)
        if self._pos + self.batch_size > self._order.size:
            self._order = self.rng.permutation(n)
            self._pos = 0
            self.epoch += 1
        idx = np.sort(self._order[self._pos:self._pos + self.batch_size])
        self._pos += self.batch_size
        return idx

    def estimate(self, theta, idx):
        """Gradient estimate from an explicit index set."""
        idx = np.asarray(idx, dtype=int)
        if idx.size == 0:
            raise EmptyDatasetError("empty minibatch")
        scale = self.model.n_data / idx.size
        return scale * self.model.data_grad(theta, idx) + self.model.prior_grad(theta)

    def __call__(self, theta):
        idx = self.next_batch()
        self.calls += 1
        if self.track_noise:
            g = self.model.example_grads(theta, idx)
            if g.ndim == 2 and g.shape[0] > 1:
                n_tot = self.model.n_data
                self._fisher.append(n_tot**2 / idx.size * g.var(axis=0, ddof=1))
        return self.estimate(theta, idx)

    def noise_estimate(self):
        """Windowed mean of the diagonal gradient-noise covariance, or None."""
        if not self._fisher:
            return None
        return np.mean(np.stack(self._fisher), axis=0)
