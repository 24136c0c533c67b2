"""Sampling and optimization update rules.

Exact HMC (leapfrog + Metropolis-Hastings), the naive stochastic-gradient
variant, SGHMC with friction in both its momentum (``r``) and velocity
(``v = eps M^{-1} r``) parameterizations, SGLD, and SGD with and without
momentum. Positions may carry leading batch axes, in which case every chain
in the batch is advanced in lockstep with independent noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigurationError, DivergenceError, UnsupportedConfigurationError
from .models import ExactGradient, MassMatrix, PhaseState, SymMatrix, hamiltonian
from .rng import make_rng

FISHER = "fisher"


@dataclass
class SampleChain:
    """Recorded output of a chain runner.

    ``samples`` has shape ``(n_iters, *batch, d)``. ``momenta`` and
    ``energies`` are filled only when requested. Acceptance counts are summed
    over the batch.
    """

    samples: np.ndarray
    energies: np.ndarray | None = None
    momenta: np.ndarray | None = None
    accept_count: int = 0
    propose_count: int = 0
    seed: object = None
    burn_in: int = 0

    def __post_init__(self):
        if self.accept_count > self.propose_count:
            raise ValueError("accept_count cannot exceed propose_count")

    def __len__(self):
        return len(self.samples)

    @property
    def acceptance_rate(self) -> float:
        return self.accept_count / self.propose_count if self.propose_count else float("nan")

    def kept(self) -> np.ndarray:
        return self.samples[self.burn_in:]

    def flat(self) -> np.ndarray:
        """Kept samples with iteration and batch axes merged: ``(n, d)``."""
        k = self.kept()
        return k.reshape(-1, k.shape[-1])


def _check_finite(step, *arrays, state=None):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise DivergenceError(f"non-finite state at step {step}", step=step, state=state)


# -- step-size schedules ---------------------------------------------------

def constant(epsilon: float) -> Callable[[int], float]:
    return lambda t: epsilon


def linear_decay(start: float, end: float, n_iters: int) -> Callable[[int], float]:
    """Linear interpolation from ``start`` at t=0 to ``end`` at ``t=n_iters-1``."""
    span = max(n_iters - 1, 1)
    return lambda t: start + (end - start) * min(t, span) / span


def inverse_decay(a: float, b: float = 1.0, gamma: float = 1.0) -> Callable[[int], float]:
    """``a (b + t)^(-gamma)``; gamma in (0.5, 1] gives the usual SGLD conditions."""
    return lambda t: a * (b + t) ** (-gamma)


# -- Hamiltonian Monte Carlo -----------------------------------------------

@dataclass(frozen=True)
class HmcConfig:
    epsilon: float
    m: int = 1
    mass: MassMatrix = None
    mh_correction: bool = True
    resample_every: int = 1

    def __post_init__(self):
        object.__setattr__(self, "mass", MassMatrix.coerce(self.mass))
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be positive")
        if int(self.m) != self.m or self.m < 1:
            raise ConfigurationError("m must be a positive integer")
        if int(self.resample_every) != self.resample_every or self.resample_every < 1:
            raise ConfigurationError("resample_every must be a positive integer")


def leapfrog(model, state: PhaseState, mass, epsilon: float, m: int, grad_fn=None) -> PhaseState:
    """Simulate ``m`` leapfrog steps of Hamiltonian dynamics.

    Half momentum step, then ``m`` rounds of full position step followed by a
    momentum step, the last of which is a half step. ``grad_fn`` defaults to
    the exact gradient; any oracle can be substituted.
    """
    mass = MassMatrix.coerce(mass)
    grad = grad_fn if grad_fn is not None else model.grad
    theta = state.theta.copy()
    r = state.r - 0.5 * epsilon * grad(theta)
    _check_finite(0, r, state=state)
    for i in range(m):
        theta = theta + epsilon * mass.inv_apply(r)
        g = grad(theta)
        if i < m - 1:
            r = r - epsilon * g
        else:
            r = r - 0.5 * epsilon * g
        _check_finite(i + 1, theta, r, state=PhaseState(theta, r))
    return PhaseState(theta, r)


def hmc_chain(model, init, config: HmcConfig, n_iters: int, seed=None, oracle=None,
              record_energy: bool = False, burn_in: int = 0) -> SampleChain:
    """Run HMC (resample momentum, leapfrog, accept or reject) for ``n_iters`` proposals.

    With ``oracle`` given, the leapfrog uses that gradient estimate while the
    Metropolis-Hastings test (when enabled) always uses the full-data
    potential. The acceptance test is ``u < exp(H_old - H_new)``.
    """
    rng = make_rng(seed)
    mass = config.mass
    grad_fn = oracle if oracle is not None else ExactGradient(model)
    theta = np.array(init, dtype=float)
    samples = np.empty((n_iters,) + theta.shape)
    energies = np.empty((n_iters,) + theta.shape[:-1]) if record_energy else None
    r = mass.sample_momentum(rng, theta.shape)
    accepted = 0
    batch = int(np.prod(theta.shape[:-1]))
    for t in range(n_iters):
        if t > 0 and t % config.resample_every == 0:
            r = mass.sample_momentum(rng, theta.shape)
        start = PhaseState(theta, r)
        try:
            prop = leapfrog(model, start, mass, config.epsilon, config.m, grad_fn)
        except DivergenceError as exc:
            exc.chain = SampleChain(samples[:t].copy(), None if energies is None else energies[:t].copy(),
                                    accept_count=accepted, propose_count=t * batch, seed=seed,
                                    burn_in=min(burn_in, t))
            exc.step = t
            raise
        if config.mh_correction:
            h_old = hamiltonian(model, start, mass)
            h_new = hamiltonian(model, prop, mass)
            log_u = np.log(rng.random(h_old.shape))
            accept = log_u < h_old - h_new
            theta = np.where(accept[..., None], prop.theta, theta)
            r = np.where(accept[..., None], prop.r, r)
            accepted += int(np.sum(accept))
        else:
            theta, r = prop.theta, prop.r
            accepted += batch
        samples[t] = theta
        if record_energy:
            energies[t] = hamiltonian(model, PhaseState(theta, r), mass)
    return SampleChain(samples, energies, accept_count=accepted, propose_count=n_iters * batch,
                       seed=seed, burn_in=burn_in)


def naive_sghmc_chain(model, init, config: HmcConfig, oracle, n_iters: int, seed=None,
                      record_energy: bool = False, burn_in: int = 0) -> SampleChain:
    """HMC with the gradient inside the leapfrog replaced by ``oracle``."""
    return hmc_chain(model, init, config, n_iters, seed=seed, oracle=oracle,
                     record_energy=record_energy, burn_in=burn_in)


# -- SGHMC -----------------------------------------------------------------

@dataclass(frozen=True)
class SghmcConfig:
    """Settings for SGHMC in the momentum parameterization.

    ``C`` and ``B_hat`` accept scalars, diagonals or dense PSD matrices.
    ``B_hat="fisher"`` estimates ``eps/2 * V_hat`` from the oracle's windowed
    empirical Fisher (requires a diagonal ``C`` and a tracking oracle).
    ``resample_every`` (outer iterations) is off by default. ``schedule``
    maps the outer iteration index to a step size.
    """

    epsilon: float
    m: int = 1
    mass: MassMatrix = None
    C: object = 1.0
    B_hat: object = 0.0
    resample_every: int | None = None
    schedule: Callable[[int], float] | None = None
    noise_cov: SymMatrix = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "mass", MassMatrix.coerce(self.mass))
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be positive")
        if int(self.m) != self.m or self.m < 1:
            raise ConfigurationError("m must be a positive integer")
        if self.resample_every is not None and self.resample_every < 1:
            raise ConfigurationError("resample_every must be a positive integer")
        C = SymMatrix.coerce(self.C)
        object.__setattr__(self, "C", C)
        if not C.is_psd():
            raise ConfigurationError("friction C is not PSD")
        if isinstance(self.B_hat, str):
            if self.B_hat != FISHER:
                raise ConfigurationError(f"unknown noise estimate {self.B_hat!r}")
            if not C.is_diagonal:
                raise UnsupportedConfigurationError("empirical-Fisher B_hat needs a diagonal C")
            object.__setattr__(self, "noise_cov", C)
            return
        B_hat = SymMatrix.coerce(self.B_hat)
        object.__setattr__(self, "B_hat", B_hat)
        if not B_hat.is_psd():
            raise ConfigurationError("noise estimate B_hat is not PSD")
        diff = C - B_hat
        if not diff.is_psd():
            raise ConfigurationError("friction minus noise estimate not PSD")
        diff.factor()
        object.__setattr__(self, "noise_cov", diff)

    @property
    def uses_fisher(self) -> bool:
        return isinstance(self.B_hat, str)

    def step_size(self, t: int) -> float:
        return self.epsilon if self.schedule is None else float(self.schedule(t))


def _sghmc_noise(config: SghmcConfig, oracle, eps, rng, shape):
    if config.uses_fisher:
        v_hat = oracle.noise_estimate() if hasattr(oracle, "noise_estimate") else None
        c = config.C.diagonal(shape[-1])
        diff = c if v_hat is None else np.clip(c - 0.5 * eps * v_hat, 0.0, None)
        return np.sqrt(2.0 * eps * diff) * rng.standard_normal(shape)
    cov = config.noise_cov
    if cov.is_zero:
        return 0.0
    z = rng.standard_normal(shape)
    if cov.kind == "dense":
        return np.sqrt(2.0 * eps) * cov.apply_factor(z)
    return np.sqrt(2.0 * eps * cov.value) * z


def sghmc_step(model, state: PhaseState, config: SghmcConfig, oracle, rng, epsilon=None) -> PhaseState:
    """One SGHMC update: position first, then momentum at the new position.

    ``r <- r - eps grad_tilde(theta) - eps C M^{-1} r + N(0, 2 (C - B_hat) eps)``.
    """
    eps = config.epsilon if epsilon is None else epsilon
    mass = config.mass
    r = state.r
    theta = state.theta + eps * mass.inv_apply(r)
    g = oracle(theta)
    noise = _sghmc_noise(config, oracle, eps, rng, theta.shape)
    r = r - eps * g - eps * config.C.apply(mass.inv_apply(r)) + noise
    new = PhaseState(theta, r)
    _check_finite(None, theta, r, state=state)
    return new


def sghmc_chain(model, init, config: SghmcConfig, oracle, n_iters: int, seed=None,
                init_momentum=None, record_momentum: bool = False,
                record_energy: bool = False, burn_in: int = 0) -> SampleChain:
    """Run SGHMC: ``m`` inner steps per outer iteration, never any MH test.

    Records ``theta`` after each outer iteration. The initial momentum is
    drawn from ``N(0, M)`` unless ``init_momentum`` is supplied.
    """
    rng = make_rng(seed)
    mass = config.mass
    theta = np.array(init, dtype=float)
    if init_momentum is None:
        r = mass.sample_momentum(rng, theta.shape)
    else:
        r = np.array(np.broadcast_to(init_momentum, theta.shape), dtype=float)
    state = PhaseState(theta, r)
    samples = np.empty((n_iters,) + theta.shape)
    momenta = np.empty_like(samples) if record_momentum else None
    energies = np.empty((n_iters,) + theta.shape[:-1]) if record_energy else None
    batch = int(np.prod(theta.shape[:-1]))
    step = 0
    for t in range(n_iters):
        if config.resample_every is not None and t > 0 and t % config.resample_every == 0:
            state = PhaseState(state.theta, mass.sample_momentum(rng, theta.shape))
        eps = config.step_size(t)
        try:
            for _ in range(config.m):
                state = sghmc_step(model, state, config, oracle, rng, eps)
                step += 1
        except DivergenceError as exc:
            exc.step = step
            exc.chain = SampleChain(samples[:t].copy(),
                                    None if energies is None else energies[:t].copy(),
                                    None if momenta is None else momenta[:t].copy(),
                                    accept_count=t * batch, propose_count=t * batch,
                                    seed=seed, burn_in=min(burn_in, t))
            raise
        samples[t] = state.theta
        if record_momentum:
            momenta[t] = state.r
        if record_energy:
            energies[t] = hamiltonian(model, state, mass)
    return SampleChain(samples, energies, momenta, accept_count=n_iters * batch,
                       propose_count=n_iters * batch, seed=seed, burn_in=burn_in)


# -- momentum (SGD-like) parameterization ----------------------------------

@dataclass(frozen=True)
class MomentumFormConfig:
    """Learning rate ``eta``, momentum decay ``alpha`` and noise term ``beta_hat``.

    Each may be a scalar or a per-dimension vector. The injected noise has
    variance ``2 (alpha - beta_hat) eta``, so ``alpha >= beta_hat >= 0``.
    """

    eta: object
    alpha: object = 0.01
    beta_hat: object = 0.0

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=float)
        alpha = np.asarray(self.alpha, dtype=float)
        beta = np.asarray(self.beta_hat, dtype=float)
        if np.any(eta <= 0):
            raise ConfigurationError("eta must be positive")
        if np.any(beta < 0):
            raise ConfigurationError("beta_hat must be non-negative")
        if np.any(alpha - beta < 0):
            raise ConfigurationError("alpha - beta_hat must be non-negative")
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta_hat", beta)

    @property
    def noise_var(self):
        return 2.0 * (self.alpha - self.beta_hat) * self.eta


def reparameterize(epsilon: float, mass=None, C=1.0, B_hat=0.0) -> MomentumFormConfig:
    """Map ``(eps, M, C, B_hat)`` to ``eta = eps^2 M^-1``, ``alpha = eps M^-1 C``, ``beta = eps M^-1 B_hat``."""
    mass = MassMatrix.coerce(mass)
    C = SymMatrix.coerce(C)
    B_hat = SymMatrix.coerce(B_hat)
    if not (mass.is_diagonal and C.is_diagonal and B_hat.is_diagonal):
        raise UnsupportedConfigurationError("reparameterize needs diagonal M, C and B_hat")
    inv = mass.inverse().value
    return MomentumFormConfig(eta=epsilon**2 * inv, alpha=epsilon * inv * C.value,
                              beta_hat=epsilon * inv * B_hat.value)


def momentum_form_step(theta, v, config: MomentumFormConfig, oracle, rng):
    """``theta <- theta + v``; ``v <- v - eta grad(theta) - alpha v + N(0, 2 (alpha - beta) eta)``."""
    theta = theta + v
    g = oracle(theta)
    var = config.noise_var
    if np.any(var):
        noise = np.sqrt(var) * rng.standard_normal(np.shape(theta))
    else:
        noise = 0.0
    v = v - config.eta * g - config.alpha * v + noise
    _check_finite(None, theta, v)
    return theta, v


def momentum_form_chain(model, init, config: MomentumFormConfig, oracle, n_iters: int,
                        seed=None, init_velocity=None, burn_in: int = 0,
                        record_velocity: bool = False) -> SampleChain:
    """Run SGHMC in its velocity form; ``v`` starts at ``N(0, eta)`` unless given."""
    rng = make_rng(seed)
    theta = np.array(init, dtype=float)
    if init_velocity is None:
        v = np.sqrt(config.eta) * rng.standard_normal(theta.shape)
    else:
        v = np.array(np.broadcast_to(init_velocity, theta.shape), dtype=float)
    samples = np.empty((n_iters,) + theta.shape)
    velocities = np.empty_like(samples) if record_velocity else None
    batch = int(np.prod(theta.shape[:-1]))
    for t in range(n_iters):
        try:
            theta, v = momentum_form_step(theta, v, config, oracle, rng)
        except DivergenceError as exc:
            exc.step = t
            exc.chain = SampleChain(samples[:t].copy(), accept_count=t * batch,
                                    propose_count=t * batch, seed=seed, burn_in=min(burn_in, t))
            raise
        samples[t] = theta
        if record_velocity:
            velocities[t] = v
    return SampleChain(samples, momenta=velocities, accept_count=n_iters * batch,
                       propose_count=n_iters * batch, seed=seed, burn_in=burn_in)


# -- first-order methods ---------------------------------------------------

def sgld_step(theta, eta: float, oracle, rng, mass=None):
    """``theta <- theta - eta M^-1 grad(theta) + N(0, 2 eta M^-1)``."""
    if eta == 0:
        return np.array(theta, dtype=float, copy=True)
    mass = MassMatrix.coerce(mass)
    g = oracle(theta)
    z = rng.standard_normal(np.shape(theta))
    if mass.kind == "dense":
        noise = np.sqrt(2.0 * eta) * mass.inverse().apply_factor(z)
    else:
        noise = np.sqrt(2.0 * eta / mass.value) * z
    theta = theta - eta * mass.inv_apply(g) + noise
    _check_finite(None, theta)
    return theta


def sgld_chain(model, init, eta, oracle, n_iters: int, seed=None, mass=None,
               schedule=None, burn_in: int = 0) -> SampleChain:
    rng = make_rng(seed)
    theta = np.array(init, dtype=float)
    samples = np.empty((n_iters,) + theta.shape)
    batch = int(np.prod(theta.shape[:-1]))
    for t in range(n_iters):
        step = eta if schedule is None else float(schedule(t))
        try:
            theta = sgld_step(theta, step, oracle, rng, mass)
        except DivergenceError as exc:
            exc.step = t
            exc.chain = SampleChain(samples[:t].copy(), accept_count=t * batch,
                                    propose_count=t * batch, seed=seed, burn_in=min(burn_in, t))
            raise
        samples[t] = theta
    return SampleChain(samples, accept_count=n_iters * batch, propose_count=n_iters * batch,
                       seed=seed, burn_in=burn_in)


def sgd_step(theta, eta: float, oracle):
    theta = theta - eta * oracle(theta)
    _check_finite(None, theta)
    return theta


def sgd_momentum_step(theta, v, eta: float, alpha: float, oracle):
    """Velocity form with the noise deleted: ``theta += v; v += -eta g - alpha v``."""
    theta = theta + v
    v = v - eta * oracle(theta) - alpha * v
    _check_finite(None, theta, v)
    return theta, v


def linear_stationary_covariance(epsilon: float, C: float = 1.0, V: float = 0.0,
                                 B_hat: float = 0.0, mass: float = 1.0,
                                 curvature: float = 1.0) -> np.ndarray:
    """Exact stationary covariance of ``(theta, r)`` for SGHMC on ``U = curvature * theta^2 / 2``.

    One SGHMC step is linear in ``(theta, r)`` plus Gaussian noise, so the
    stationary covariance solves a discrete Lyapunov equation. The gradient
    noise ``N(0, V)`` enters the momentum scaled by ``eps``.
    """
    from scipy.linalg import solve_discrete_lyapunov

    e, k, m = float(epsilon), float(curvature), float(mass)
    A = np.array([[1.0, e / m],
                  [-e * k, 1.0 - e * e * k / m - e * C / m]])
    q = e * e * V + 2.0 * (C - B_hat) * e
    if q < 0:
        raise ConfigurationError("friction minus noise estimate not PSD")
    if np.max(np.abs(np.linalg.eigvals(A))) >= 1.0 - 1e-12:
        raise ConfigurationError("step size too large: the linear recursion is unstable")
    return solve_discrete_lyapunov(A, np.diag([0.0, q]))
