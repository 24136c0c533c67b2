"""Phase-space Fokker-Planck evolution on a rectangular (theta, r) grid.

Densities live at cell centers of a uniform grid over a 1D position and its
momentum. The operator

    dp/dt = -d/dtheta[(r/M) p] + d/dr[(U'(theta) + gamma r/M) p] + D d2p/dr2

covers noise-free Hamiltonian flow (gamma = D = 0), noisy Hamiltonian flow
(gamma = 0, D = B) and second-order Langevin dynamics with friction
(gamma = B, D = tau B). It is discretized in flux form with central face
averages and zero-flux walls, so total mass is conserved to rounding, and is
advanced with classical Runge-Kutta.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, ConvergenceError

_MASS_TOL = 1e-6


@dataclass
class GridDensity:
    """Density samples ``values[i, j]`` at ``(theta_axis[i], r_axis[j])``."""

    theta_axis: np.ndarray
    r_axis: np.ndarray
    values: np.ndarray
    clipped: float = 0.0

    @property
    def dtheta(self) -> float:
        return float(self.theta_axis[1] - self.theta_axis[0])

    @property
    def dr(self) -> float:
        return float(self.r_axis[1] - self.r_axis[0])

    @property
    def cell_area(self) -> float:
        return self.dtheta * self.dr

    @property
    def shape(self):
        return self.values.shape

    def mass(self) -> float:
        return float(self.values.sum() * self.cell_area)

    def normalize(self) -> "GridDensity":
        total = self.mass()
        if not total > 0:
            raise ValueError("density has no mass to normalize")
        return replace(self, values=self.values / total)

    def theta_marginal(self) -> np.ndarray:
        return self.values.sum(axis=1) * self.dr

    def r_marginal(self) -> np.ndarray:
        return self.values.sum(axis=0) * self.dtheta

    def moment(self, theta_power: int = 0, r_power: int = 0) -> float:
        w = np.outer(self.theta_axis**theta_power, self.r_axis**r_power)
        return float(np.sum(w * self.values) * self.cell_area)

    def transposed(self) -> "GridDensity":
        return GridDensity(self.r_axis, self.theta_axis, self.values.T.copy(), self.clipped)


def cell_centers(bounds, n: int) -> np.ndarray:
    lo, hi = map(float, bounds)
    h = (hi - lo) / n
    return lo + h * (np.arange(n) + 0.5)


def build_grid(theta_bounds, r_bounds, n: int, init="uniform") -> GridDensity:
    """Sample ``init(theta, r)`` (broadcast over a mesh) at cell centers and normalize.

    ``init`` may also be the string ``"uniform"``. ``n`` is the number of
    cells per axis.
    """
    if n < 32:
        raise ValueError("grids need at least 32 cells per axis")
    for lo, hi in (theta_bounds, r_bounds):
        if not (np.isfinite(lo) and np.isfinite(hi) and hi > lo):
            raise ValueError("grid bounds must be finite and increasing")
    th = cell_centers(theta_bounds, n)
    r = cell_centers(r_bounds, n)
    if isinstance(init, str):
        if init != "uniform":
            raise ValueError(f"unknown initial density {init!r}")
        values = np.ones((n, n))
    else:
        values = np.asarray(init(th[:, None], r[None, :]), dtype=float)
        values = np.broadcast_to(values, (n, n)).astype(float)
    if np.any(~np.isfinite(values)) or np.any(values < 0):
        raise ValueError("initial density must be finite and non-negative")
    if not values.sum() > 0:
        raise ValueError("initial density is identically zero")
    return GridDensity(th, r, values).normalize()


def gibbs_grid(model, theta_bounds, r_bounds, n: int, temperature: float = 1.0,
               mass: float = 1.0) -> GridDensity:
    """Grid version of ``exp(-H / temperature)``."""
    def init(th, r):
        h = model.potential(th[..., None]) + 0.5 * r**2 / mass
        return np.exp(-(h - np.min(h)) / temperature)
    return build_grid(theta_bounds, r_bounds, n, init)


@dataclass(frozen=True)
class FpeOperator:
    """Phase-space Fokker-Planck operator for a 1D model.

    Use the constructors :meth:`noise_free`, :meth:`noisy` and
    :meth:`friction`. :meth:`with_error` adds an extra momentum diffusion
    ``delta * S`` that the friction does not compensate.
    """

    model: object
    mass: float = 1.0
    friction_coef: float = 0.0
    diffusion: float = 0.0
    variant: str = "noise-free"

    def __post_init__(self):
        if getattr(self.model, "dim", 1) != 1:
            raise ConfigurationError("the FPE lab supports one position dimension")
        if not self.mass > 0:
            raise ConfigurationError("mass must be positive")
        if self.friction_coef < 0 or self.diffusion < 0:
            raise ConfigurationError("friction and diffusion must be non-negative")

    @classmethod
    def noise_free(cls, model, mass: float = 1.0) -> "FpeOperator":
        return cls(model, mass, 0.0, 0.0, "noise-free")

    @classmethod
    def noisy(cls, model, B: float, mass: float = 1.0) -> "FpeOperator":
        return cls(model, mass, 0.0, float(B), "noisy")

    @classmethod
    def friction(cls, model, B: float, tau: float = 1.0, mass: float = 1.0) -> "FpeOperator":
        if not tau > 0:
            raise ConfigurationError("temperature must be positive")
        return cls(model, mass, float(B), float(tau) * float(B), "friction")

    def with_error(self, delta: float, S: float) -> "FpeOperator":
        return replace(self, diffusion=self.diffusion + delta * S, variant=self.variant + "+error")

    @property
    def temperature(self) -> float:
        """Stationary temperature ``D / gamma`` (inf without friction)."""
        return self.diffusion / self.friction_coef if self.friction_coef > 0 else np.inf

    def _coefficients(self, grid: GridDensity):
        th, r = grid.theta_axis, grid.r_axis
        u = r / self.mass
        r_face = 0.5 * (r[:-1] + r[1:])
        dU = self.model.grad(th[:, None])[:, 0]
        w = -(dU[:, None] + self.friction_coef * r_face[None, :] / self.mass)
        return u, w

    def max_dt(self, grid: GridDensity) -> float:
        """Largest step the solver accepts on ``grid``."""
        u, w = self._coefficients(grid)
        limits = [grid.dtheta / np.max(np.abs(u)), grid.dr / np.max(np.abs(w))]
        if self.diffusion > 0:
            limits.append(grid.dr**2 / (2.0 * self.diffusion))
        return 0.25 * min(limits)

    def apply(self, grid: GridDensity, values=None, coefficients=None) -> np.ndarray:
        """Semi-discrete time derivative of ``values`` (default ``grid.values``)."""
        p = grid.values if values is None else values
        u, w = self._coefficients(grid) if coefficients is None else coefficients
        out = np.zeros_like(p)
        f = 0.5 * (p[:-1, :] + p[1:, :]) * u[None, :]
        out[:-1, :] -= f
        out[1:, :] += f
        out /= grid.dtheta
        g = w * (0.5 * (p[:, :-1] + p[:, 1:]))
        if self.diffusion:
            g -= self.diffusion * (p[:, 1:] - p[:, :-1]) / grid.dr
        out[:, :-1] -= g / grid.dr
        out[:, 1:] += g / grid.dr
        return out


def fpe_step(op: FpeOperator, p: GridDensity, dt: float, n_steps: int = 1) -> GridDensity:
    """Advance ``p`` by ``n_steps`` Runge-Kutta steps of size ``dt``.

    Negative values produced by the central scheme are clipped to zero and
    the density renormalized; the clipped mass is accumulated in
    ``result.clipped``.
    """
    limit = op.max_dt(p)
    if not 0 < dt <= limit:
        raise ConfigurationError(f"dt={dt:g} violates the stability bound {limit:g}")
    coef = op._coefficients(p)
    vals = p.values
    area = p.cell_area
    clipped = 0.0
    for _ in range(n_steps):
        k1 = op.apply(p, vals, coef)
        k2 = op.apply(p, vals + 0.5 * dt * k1, coef)
        k3 = op.apply(p, vals + 0.5 * dt * k2, coef)
        k4 = op.apply(p, vals + dt * k3, coef)
        vals = vals + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        neg = vals < 0
        if neg.any():
            lost = -float(vals[neg].sum()) * area
            clipped += lost
            vals = np.where(neg, 0.0, vals)
            vals = vals / (vals.sum() * area)
    return GridDensity(p.theta_axis, p.r_axis, vals, p.clipped + clipped)


def _require_normalized(p: GridDensity):
    if abs(p.mass() - 1.0) > _MASS_TOL:
        raise ValueError(f"density is not normalized (mass {p.mass():.6g})")


def entropy(p: GridDensity) -> float:
    """Differential entropy ``-sum p ln p dA`` with ``0 ln 0 = 0``."""
    _require_normalized(p)
    v = p.values
    pos = v > 0
    return float(-np.sum(v[pos] * np.log(v[pos])) * p.cell_area)


def entropy_rate_rhs(op: FpeOperator, p: GridDensity, floor: float = 1e-300) -> float:
    """Entropy production ``int f''(p) B (dp/dr)^2`` with ``f''(p) = 1/p``.

    Momentum derivatives and densities are evaluated on the r-faces of the
    grid, where the scheme's diffusive fluxes live.
    """
    B = op.diffusion
    if B == 0:
        return 0.0
    v = p.values
    dp = (v[:, 1:] - v[:, :-1]) / p.dr
    pf = 0.5 * (v[:, 1:] + v[:, :-1])
    ok = pf > floor
    return float(B * np.sum(dp[ok] ** 2 / pf[ok]) * p.cell_area)


def chi2_divergence(p: GridDensity, pi: GridDensity, floor: float = 1e-12, report: bool = False):
    """``sum (p - pi)^2 / pi dA`` over cells where ``pi >= floor``.

    With ``report=True`` returns ``(chi2, n_excluded_cells)``.
    """
    if p.values.shape != pi.values.shape:
        raise ValueError("densities live on different grids")
    keep = pi.values >= floor
    if not keep.any():
        raise ValueError("every cell of the reference density is below the floor")
    diff = p.values[keep] - pi.values[keep]
    value = float(np.sum(diff**2 / pi.values[keep]) * p.cell_area)
    if report:
        return value, int(np.count_nonzero(~keep))
    return value


def residual(op: FpeOperator, p: GridDensity, dt: float | None = None) -> float:
    """``max |dp/dt|`` at ``p``.

    Without ``dt`` this is the semi-discrete operator; with ``dt`` it is the
    realized change of one :func:`fpe_step`, ``max |p(t+dt) - p(t)| / dt``.
    """
    if dt is None:
        return float(np.max(np.abs(op.apply(p))))
    return float(np.max(np.abs(fpe_step(op, p, dt).values - p.values)) / dt)


def gibbs_noisy_rate(model, p: GridDensity, B: float, mass: float = 1.0) -> np.ndarray:
    """Exact ``dp/dt`` of the noisy operator at ``p = exp(-H)/Z``: ``B (r^2/M^2 - 1/M) p``.

    The Hamiltonian part vanishes at any function of ``H``, leaving only the
    momentum diffusion.
    """
    r = p.r_axis[None, :]
    return B * (r**2 / mass**2 - 1.0 / mass) * p.values


def truncation_error(model, p: GridDensity, B: float = 1.0, mass: float = 1.0) -> float:
    """Spatial truncation error of the scheme at a Gibbs density.

    Measured as ``max |L_h p - L p|`` for the noisy operator, whose exact
    value at ``exp(-H)`` is known in closed form.
    """
    op = FpeOperator.noisy(model, B, mass)
    return float(np.max(np.abs(op.apply(p) - gibbs_noisy_rate(model, p, B, mass))))


@dataclass
class SteadyState:
    density: GridDensity
    steps: int
    time: float
    residual: float


def evolve_to_steady_state(op: FpeOperator, p: GridDensity, dt: float | None = None,
                           tol: float = 1e-7, max_steps: int = 200_000,
                           check_every: int = 100) -> SteadyState:
    """Step until ``max |dp/dt| <= tol * max p`` or raise :class:`ConvergenceError`."""
    dt = op.max_dt(p) if dt is None else dt
    steps = 0
    res = residual(op, p)
    while res > tol * np.max(p.values):
        if steps >= max_steps:
            raise ConvergenceError(f"no steady state after {steps} steps (residual {res:.3g})",
                                   residual=res)
        p = fpe_step(op, p, dt, check_every)
        steps += check_every
        res = residual(op, p)
    return SteadyState(p, steps, steps * dt, res)


def stationary_inflation_check(model=None, C: float = 1.0, V: float = 1.0, epsilon: float = 0.1,
                               n: int = 96, bound: float = 6.0, tol: float = 1e-7,
                               max_steps: int = 200_000) -> float:
    """Steady-state position variance when SGHMC ignores its gradient noise.

    Starts at the target Gibbs density and evolves the matched friction
    operator plus the uncompensated diffusion ``delta * S`` with
    ``delta = epsilon`` and ``S = V / 2`` (``B_hat = 0``). For the quadratic
    model the returned variance equals the stationary temperature.
    """
    from .models import quadratic

    model = quadratic() if model is None else model
    pi = gibbs_grid(model, (-bound, bound), (-bound, bound), n)
    if epsilon == 0:
        return pi.moment(2, 0) - pi.moment(1, 0) ** 2
    op = FpeOperator.friction(model, C, 1.0).with_error(epsilon, 0.5 * V)
    steady = evolve_to_steady_state(op, pi, tol=tol, max_steps=max_steps)
    q = steady.density
    return q.moment(2, 0) - q.moment(1, 0) ** 2
