"""Experiment bodies behind the harness.

Each runner receives a validated :class:`~sghmc.config.ExperimentConfig`
and an :class:`Outputs` sink, writes its raw and summary tables, and returns
the summary rows. Every random stream is derived from ``config.seed``.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from . import bayes, diagnostics, fpe
from .config import ExperimentConfig, SamplerSpec
from .models import (DoubleWell, ExactGradient, Gaussian, MassMatrix, NoisyGradient, PhaseState,
                     correlated_gaussian, hamiltonian, quadratic)
from .rng import make_rng, streams
from .samplers import (HmcConfig, MomentumFormConfig, SghmcConfig, hmc_chain, leapfrog,
                       linear_stationary_covariance, momentum_form_chain, naive_sghmc_chain,
                       sghmc_chain, sghmc_step, sgld_chain)
from .svg import Plot


class Outputs:
    """Collects the files an experiment writes, tagged as raw or summary data."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files = {}

    def csv(self, name: str, header, rows, kind: str = "raw") -> Path:
        path = self.root / name
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(x) for x in row])
        self.files[name] = kind
        return path

    def svg(self, name: str, plot: Plot) -> Path:
        path = plot.save(self.root / name)
        self.files[name] = "plot"
        return path


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return int(x)
    return x


def build_model(spec):
    p = spec.params
    if spec.name == "double-well":
        return DoubleWell()
    if spec.name == "quadratic":
        return quadratic(int(p.get("dim", 1)))
    if spec.name == "correlated-gaussian":
        return correlated_gaussian(float(p.get("rho", 0.9)))
    if spec.name == "gaussian":
        return Gaussian(p["cov"])
    raise ValueError(f"model {spec.name!r} has no potential-only form")


def _init(config: ExperimentConfig, dim: int) -> np.ndarray:
    theta0 = np.asarray(config.params.get("init", 0.0), dtype=float)
    return np.broadcast_to(theta0, (config.n_chains, dim)).copy()


def _iters(config: ExperimentConfig) -> int:
    return config.n_samples // config.n_chains + config.burn_in


def run_sampler(model, spec: SamplerSpec, config: ExperimentConfig, rng_seed, init, n_iters,
                noise_var, **kw):
    """Run one variant of the simulated-target experiments."""
    rngs = streams(rng_seed, "chain", "oracle")
    oracle = (ExactGradient(model) if np.all(np.asarray(noise_var) == 0)
              else NoisyGradient(model, noise_var, rngs["oracle"]))
    if spec.kind == "hmc":
        cfg = HmcConfig(spec.epsilon, spec.m, spec.mass, spec.mh, spec.resample_every or 1)
        return hmc_chain(model, init, cfg, n_iters, rngs["chain"], burn_in=config.burn_in, **kw)
    if spec.kind == "naive-sghmc":
        cfg = HmcConfig(spec.epsilon, spec.m, spec.mass, spec.mh, spec.resample_every or 1)
        return naive_sghmc_chain(model, init, cfg, oracle, n_iters, rngs["chain"],
                                 burn_in=config.burn_in, **kw)
    if spec.kind == "sghmc":
        cfg = SghmcConfig(spec.epsilon, spec.m, spec.mass, spec.C, spec.B_hat, spec.resample_every)
        return sghmc_chain(model, init, cfg, oracle, n_iters, rngs["chain"],
                           burn_in=config.burn_in, **kw)
    if spec.kind == "sgld":
        eta = spec.eta if spec.eta is not None else spec.epsilon
        return sgld_chain(model, init, eta, oracle, n_iters, rngs["chain"], burn_in=config.burn_in)
    if spec.kind == "momentum-form":
        eta = spec.eta if spec.eta is not None else spec.epsilon
        cfg = MomentumFormConfig(eta, spec.alpha, spec.beta_hat)
        return momentum_form_chain(model, init, cfg, oracle, n_iters, rngs["chain"],
                                   burn_in=config.burn_in)
    raise ValueError(f"sampler kind {spec.kind!r} is not supported for {config.experiment}")


def _sampler_seeds(config: ExperimentConfig):
    ss = np.random.SeedSequence(config.seed)
    return dict(zip((s.label for s in config.samplers), ss.spawn(len(config.samplers))))


# -- simulated targets ---------------------------------------------------------

def run_fig1(config: ExperimentConfig, out: Outputs):
    model = build_model(config.model)
    bounds = tuple(config.params.get("bounds", (-3.0, 3.0)))
    n_bins = int(config.params.get("n_bins", 40))
    edges = np.linspace(bounds[0], bounds[1], n_bins + 1)
    support = tuple(config.params.get("support", (-10.0, 10.0)))
    ref = diagnostics.bin_averages(lambda x: float(np.exp(-model.potential(np.array([x])))), edges,
                                   support)
    plot = Plot("Sample histograms", "theta", "density")
    plot.step(edges, ref, "true density", color="black")
    out.csv("fig1_true_density.csv", ["bin_left", "bin_right", "height"],
            zip(edges[:-1], edges[1:], ref))
    seeds = _sampler_seeds(config)
    rows = []
    for spec in config.samplers:
        chain = run_sampler(model, spec, config, seeds[spec.label], _init(config, 1), _iters(config),
                            config.noise_var)
        h = diagnostics.histogram(chain.kept(), bounds, n_bins)
        l1 = float(np.sum(np.abs(h.heights - ref) * np.diff(edges)))
        out.csv(f"fig1_hist_{spec.label}.csv", ["bin_left", "bin_right", "height"], h.rows())
        plot.step(edges, h.heights, spec.label)
        rows.append([spec.label, l1, chain.acceptance_rate, h.n_outside, chain.kept().size])
    out.csv("fig1_summary.csv", ["variant", "l1", "acceptance", "n_outside", "n_kept"], rows,
            kind="summary")
    out.svg("fig1_histograms.svg", plot)
    return rows


def _trajectory(model, spec: SamplerSpec, n_steps, state, noise_var, seed):
    """Record ``(theta, r)`` after every step of one dynamics variant."""
    rngs = streams(seed, "oracle", "momentum")
    noisy = not np.all(np.asarray(noise_var) == 0)
    oracle = NoisyGradient(model, noise_var, rngs["oracle"]) if noisy else ExactGradient(model)
    mass = MassMatrix.coerce(spec.mass)
    out = np.empty((n_steps, 2))
    if spec.kind == "sghmc":
        cfg = SghmcConfig(spec.epsilon, 1, spec.mass, spec.C, spec.B_hat)
        rng = rngs["momentum"]
        for t in range(n_steps):
            state = sghmc_step(model, state, cfg, oracle, rng)
            out[t] = state.theta[0], state.r[0]
        return out
    for t in range(n_steps):
        if spec.resample_every and t > 0 and t % spec.resample_every == 0:
            state = PhaseState(state.theta, mass.sample_momentum(rngs["momentum"], state.theta.shape))
        state = leapfrog(model, state, mass, spec.epsilon, 1, grad_fn=oracle)
        out[t] = state.theta[0], state.r[0]
    return out


def run_fig2(config: ExperimentConfig, out: Outputs):
    model = build_model(config.model)
    theta0 = float(config.params.get("theta0", 1.0))
    r0 = float(config.params.get("r0", 0.0))
    n_steps = config.n_samples
    seeds = _sampler_seeds(config)
    start = PhaseState(np.array([theta0]), np.array([r0]))
    h0 = float(hamiltonian(model, start))
    plot = Plot("Phase-space trajectories", "theta", "r")
    rows = []
    for spec in config.samplers:
        nv = 0.0 if spec.kind == "hmc" else config.noise_var
        path = _trajectory(model, spec, n_steps, start.copy(), nv, seeds[spec.label])
        H = hamiltonian(model, PhaseState(path[:, :1], path[:, 1:]))
        out.csv(f"fig2_traj_{spec.label}.csv", ["step", "theta", "r", "H"],
                ((t + 1, a, b, h) for t, ((a, b), h) in enumerate(zip(path, H))))
        stride = max(1, n_steps // 3000)
        plot.scatter(path[::stride, 0], path[::stride, 1], spec.label)
        rows.append([spec.label, h0, float(H.max()), float(H.max() / h0),
                     float(np.max(np.abs(H - h0)) / h0)])
    out.csv("fig2_summary.csv", ["variant", "H0", "max_H", "max_H_ratio", "max_rel_drift"], rows,
            kind="summary")
    out.svg("fig2_phase.svg", plot)
    return rows


def run_fig3(config: ExperimentConfig, out: Outputs):
    model = build_model(config.model)
    sigma = np.linalg.inv(model.precision)
    step_sizes = [float(e) for e in config.params.get("step_sizes", [0.05, 0.04, 0.03, 0.02, 0.01])]
    trace_eps = float(config.params.get("trace_step_size", step_sizes[0]))
    n_trace = int(config.params.get("n_trace", 50))
    ss = np.random.SeedSequence(config.seed)
    plot = Plot("Autocorrelation time vs covariance error", "autocorrelation time",
                "mean abs covariance error")
    rows, traces = [], []
    children = ss.spawn(len(config.samplers))
    for spec, child in zip(config.samplers, children):
        sweep = []
        for eps, seed in zip(step_sizes, child.spawn(len(step_sizes))):
            s = _with_step(spec, eps)
            chain = run_sampler(model, s, config, seed, _init(config, 2), _iters(config),
                                config.noise_var)
            kept = chain.kept()
            act = diagnostics.mean_autocorrelation_time(kept)
            err = diagnostics.covariance_error(kept, sigma)
            sweep.append((eps, act, err))
            rows.append([spec.label, eps, act, err])
            if eps == trace_eps:
                traces.extend((spec.label, t + 1, *kept[t, 0]) for t in range(min(n_trace, len(kept))))
        out.csv(f"fig3_sweep_{spec.label}.csv", ["step_size", "act", "cov_error"], sweep)
        arr = np.array(sweep)
        plot.line(arr[:, 1], arr[:, 2], spec.label)
    out.csv("fig3_first_samples.csv", ["sampler", "index", "theta1", "theta2"], traces)
    out.csv("fig3_summary.csv", ["sampler", "step_size", "act", "cov_error"], rows, kind="summary")
    out.svg("fig3_tradeoff.svg", plot)
    tp = Plot(f"First {n_trace} samples", "theta1", "theta2")
    for spec in config.samplers:
        pts = np.array([t[2:] for t in traces if t[0] == spec.label])
        if pts.size:
            tp.scatter(pts[:, 0], pts[:, 1], spec.label)
    out.svg("fig3_first_samples.svg", tp)
    return rows


def _with_step(spec: SamplerSpec, eps: float) -> SamplerSpec:
    from dataclasses import replace
    if spec.kind == "sgld":
        return replace(spec, eta=eps, epsilon=eps)
    return replace(spec, epsilon=eps)


def run_custom(config: ExperimentConfig, out: Outputs):
    model = build_model(config.model)
    seeds = _sampler_seeds(config)
    rows = []
    for spec in config.samplers:
        chain = run_sampler(model, spec, config, seeds[spec.label], _init(config, model.dim),
                            _iters(config), config.noise_var)
        kept = chain.kept()
        flat = kept.reshape(-1, model.dim)
        header = ["index", "chain"] + [f"theta{j + 1}" for j in range(model.dim)]
        out.csv(f"custom_samples_{spec.label}.csv", header,
                ((t, c, *kept[t, c]) for t in range(kept.shape[0]) for c in range(kept.shape[1])))
        act = diagnostics.mean_autocorrelation_time(kept) if kept.shape[0] >= 100 else float("nan")
        rows.append([spec.label, *flat.mean(axis=0), *flat.var(axis=0, ddof=1), act,
                     chain.acceptance_rate])
    header = (["sampler"] + [f"mean{j + 1}" for j in range(model.dim)]
              + [f"var{j + 1}" for j in range(model.dim)] + ["act", "acceptance"])
    out.csv("custom_summary.csv", header, rows, kind="summary")
    return rows


# -- Fokker-Planck lab -------------------------------------------------------

def _grid_box(config):
    b = float(config.params.get("bound", 6.0))
    return (-b, b)


def run_fpe_thm1(config: ExperimentConfig, out: Outputs):
    model = build_model(config.model)
    p = config.params
    n = int(p.get("grid", 128))
    B = float(p.get("B", 1.0))
    dt = float(p.get("dt", 1e-4))
    n_steps = config.n_samples
    every = int(p.get("record_every", 100))
    mu = [float(x) for x in p.get("init_mean", [1.0, 0.0])]
    var = float(p.get("init_var", 0.5))
    box = _grid_box(config)
    q = fpe.build_grid(box, box, n, lambda t, r: np.exp(-((t - mu[0]) ** 2 + (r - mu[1]) ** 2) / (2 * var)))
    op = fpe.FpeOperator.noisy(model, B)
    h = fpe.entropy(q)
    hs = [h]
    rows = []
    worst_rel = 0.0
    for k in range(1, n_steps + 1):
        nxt = fpe.fpe_step(op, q, dt)
        h_new = fpe.entropy(nxt)
        if (k - 1) % every == 0:
            rate_fd = (h_new - h) / dt
            rate_rhs = fpe.entropy_rate_rhs(op, q)
            rel = abs(rate_fd / rate_rhs - 1.0) if rate_rhs > 0 else np.inf
            worst_rel = max(worst_rel, rel)
            rows.append([k - 1, (k - 1) * dt, h, rate_fd, rate_rhs, q.clipped])
        q, h = nxt, h_new
        hs.append(h)
    diffs = np.diff(hs)
    out.csv("fpe_thm1_entropy.csv", ["step", "time", "entropy", "rate_fd", "rate_rhs", "clipped"], rows)
    summary = [[n_steps, float(diffs.min()), worst_rel, q.clipped, hs[0], hs[-1]]]
    out.csv("fpe_thm1_summary.csv", ["n_steps", "min_entropy_increment", "max_rate_rel_error",
                                     "clipped_mass", "entropy_start", "entropy_end"], summary,
            kind="summary")
    arr = np.array(rows)
    out.svg("fpe_thm1_entropy.svg", Plot("Entropy under noisy dynamics", "time", "entropy")
            .line(arr[:, 1], arr[:, 2], "entropy"))
    return summary


def run_fpe_thm2(config: ExperimentConfig, out: Outputs):
    model = build_model(config.model)
    p = config.params
    grids = [int(g) for g in p.get("grids", [32, 64, 128, 256])]
    B = float(p.get("B", 1.0))
    dt_frac = float(p.get("dt_fraction", 0.01))
    box = _grid_box(config)
    rows = []
    for n in grids:
        pi = fpe.gibbs_grid(model, box, box, n)
        fr = fpe.FpeOperator.friction(model, B)
        no = fpe.FpeOperator.noisy(model, B)
        nf = fpe.FpeOperator.noise_free(model)
        dt = dt_frac * min(fr.max_dt(pi), no.max_dt(pi))
        rows.append([n, dt, fpe.residual(fr, pi, dt), fpe.residual(no, pi, dt),
                     fpe.residual(nf, pi, dt), fpe.truncation_error(model, pi, B)])
    header = ["grid", "dt", "friction_residual", "noisy_residual", "noise_free_residual",
              "truncation_error"]
    out.csv("fpe_thm2_residuals.csv", header, rows, kind="summary")
    arr = np.array(rows)
    out.svg("fpe_thm2_residuals.svg",
            Plot("Residual at the Gibbs density", "log2 grid size", "log10 residual")
            .line(np.log2(arr[:, 0]), np.log10(arr[:, 2]), "friction")
            .line(np.log2(arr[:, 0]), np.log10(arr[:, 3]), "noisy")
            .line(np.log2(arr[:, 0]), np.log10(arr[:, 5]), "truncation"))
    return rows


def run_temp_check(config: ExperimentConfig, out: Outputs):
    model = build_model(config.model)
    p = config.params
    eps_list = [float(e) for e in p.get("epsilons", [0.05, 0.1])]
    C = float(p.get("C", 1.0))
    V = float(config.noise_var)
    grid = int(p.get("grid", 128))
    ss = np.random.SeedSequence(config.seed)
    rows, raw = [], []
    for eps, child in zip(eps_list, ss.spawn(len(eps_list))):
        fpe_var = fpe.stationary_inflation_check(model, C, V, eps, n=grid,
                                                 bound=float(p.get("bound", 6.0)))
        spec = SamplerSpec("sghmc", epsilon=eps, m=1, C=C, B_hat=0.0)
        chain = run_sampler(model, spec, config, child, _init(config, 1), _iters(config), V)
        kept = chain.kept()[..., 0]
        chain_var = float(np.var(kept))
        per_chain = kept.var(axis=0)
        se = float(per_chain.std(ddof=1) / np.sqrt(per_chain.size))
        exact = float(linear_stationary_covariance(eps, C, V)[0, 0])
        target = 1.0 + eps
        rows.append([eps, target, 1.0 + eps * V / (2 * C), exact, fpe_var, chain_var, se,
                     abs(fpe_var / target - 1), abs(chain_var / target - 1)])
        raw.extend((eps, c, v) for c, v in enumerate(per_chain))
    out.csv("temp_check_chain_variances.csv", ["epsilon", "chain", "theta_variance"], raw)
    header = ["epsilon", "claimed_temperature", "continuous_temperature", "discrete_exact_variance",
              "fpe_variance", "chain_variance", "chain_variance_se", "fpe_rel_error_vs_claim",
              "chain_rel_error_vs_claim"]
    out.csv("temp_check_summary.csv", header, rows, kind="summary")
    arr = np.array(rows)
    out.svg("temp_check.svg", Plot("Stationary position variance", "epsilon", "variance")
            .line(arr[:, 0], arr[:, 1], "1 + eps")
            .line(arr[:, 0], arr[:, 2], "1 + eps V / 2C")
            .scatter(arr[:, 0], arr[:, 4], "FPE steady state")
            .scatter(arr[:, 0], arr[:, 5], "SGHMC chain"))
    return rows


# -- applications ------------------------------------------------------------

_METHOD = {"sgd": "sgd", "sgd-momentum": "sgd_momentum", "sgld": "sgld", "sghmc": "sghmc"}


def _app_config(spec: SamplerSpec, config: ExperimentConfig) -> bayes.RunConfig:
    p = config.params
    return bayes.RunConfig(method=_METHOD[spec.kind],
                           eta=spec.eta if spec.eta is not None else spec.epsilon,
                           alpha=spec.alpha, beta_hat=spec.beta_hat,
                           batch_size=int(p.get("batch_size", 500)),
                           n_epochs=int(p.get("n_epochs", 20)),
                           sample_every=int(p.get("sample_every", 1)),
                           burn_in=config.burn_in)


def _run_application(config: ExperimentConfig, out: Outputs, name: str, metric: str, data, runner):
    n_seeds = int(config.params.get("n_seeds", 5))
    ss = np.random.SeedSequence(config.seed)
    seeds = ss.spawn(n_seeds)
    trace_rows, rows = [], []
    plot = Plot(f"{name}: held-out {metric} per epoch", "epoch", metric)
    for spec in config.samplers:
        rc = _app_config(spec, config)
        traces = []
        for k, s in enumerate(seeds):
            res = runner(data, rc, s)
            traces.append(res.trace)
            trace_rows.extend((spec.label, k, e + 1, v) for e, v in enumerate(res.trace))
        tr = np.array(traces)
        final = tr[:, -1]
        rows.append([spec.label, rc.n_epochs, float(final.mean()),
                     float(final.std(ddof=1) / np.sqrt(n_seeds)) if n_seeds > 1 else 0.0])
        plot.line(np.arange(1, tr.shape[1] + 1), tr.mean(axis=0), spec.label)
    out.csv(f"{name}_trace.csv", ["method", "seed_index", "epoch", metric], trace_rows)
    out.csv(f"{name}_summary.csv", ["method", "epochs", f"final_{metric}_mean", f"final_{metric}_se"],
            rows, kind="summary")
    out.svg(f"{name}_trace.svg", plot)
    return rows


def run_bnn(config: ExperimentConfig, out: Outputs):
    mp = dict(config.model.params)
    hidden = int(mp.pop("hidden", 25))
    data_seed = mp.pop("data_seed", 0)
    data = bayes.make_blobs(seed=data_seed, **mp)
    return _run_application(config, out, "bnn", "test_error", data,
                            lambda d, rc, s: bayes.bnn_sampling_run(d, rc, hidden=hidden, seed=s))


def run_pmf(config: ExperimentConfig, out: Outputs):
    mp = dict(config.model.params)
    rank = int(mp.get("rank", 5))
    tau = float(mp.get("tau", 1.0))
    data_seed = mp.pop("data_seed", 0)
    data = bayes.make_ratings(seed=data_seed, **mp)
    return _run_application(config, out, "pmf", "rmse", data,
                            lambda d, rc, s: bayes.pmf_sampling_run(d, rc, rank=rank, tau=tau, seed=s))


RUNNERS = {
    "fig1": run_fig1,
    "fig2": run_fig2,
    "fig3": run_fig3,
    "fpe-thm1": run_fpe_thm1,
    "fpe-thm2": run_fpe_thm2,
    "temp-check": run_temp_check,
    "bnn": run_bnn,
    "pmf": run_pmf,
    "custom": run_custom,
}
