import numpy as np
import pytest
from scipy import stats

from sghmc.errors import ConfigurationError, DivergenceError, UnsupportedConfigurationError
from sghmc.models import (DoubleWell, ExactGradient, MassMatrix, NoisyGradient, PhaseState,
                          correlated_gaussian, hamiltonian, quadratic)
from sghmc.samplers import (HmcConfig, MomentumFormConfig, SghmcConfig, hmc_chain, inverse_decay,
                            leapfrog, linear_decay, linear_stationary_covariance,
                            momentum_form_chain, momentum_form_step, naive_sghmc_chain,
                            reparameterize, sgd_momentum_step, sgd_step, sghmc_chain, sghmc_step,
                            sgld_chain, sgld_step)
from sghmc.diagnostics import direction_autocorrelation

# Measured on the reference run below (200 chains x 2000 proposals, seed 1).
HMC_ACCEPTANCE_FIXTURE = 0.99929


# -- leapfrog ----------------------------------------------------------------

@pytest.mark.parametrize("model", [DoubleWell(), quadratic(), correlated_gaussian(0.9)],
                         ids=["double-well", "quadratic", "correlated"])
def test_leapfrog_reversible(model):
    rng = np.random.default_rng(4)
    s0 = PhaseState(rng.uniform(-1.5, 1.5, (50, model.dim)), rng.standard_normal((50, model.dim)))
    fwd = leapfrog(model, s0, 1.0, 0.05, 40)
    back = leapfrog(model, fwd.flipped(), 1.0, 0.05, 40).flipped()
    assert np.max(np.abs(back.theta - s0.theta)) <= 1e-10
    assert np.max(np.abs(back.r - s0.r)) <= 1e-10


def test_leapfrog_jacobian_is_one_on_linear_system():
    q = quadratic()
    for eps in (0.01, 0.1, 0.5, 1.2):
        cols = [leapfrog(q, PhaseState(np.array([a]), np.array([b])), 1.0, eps, 1)
                for a, b in ((1.0, 0.0), (0.0, 1.0))]
        J = np.array([[c.theta[0], c.r[0]] for c in cols]).T
        assert abs(np.linalg.det(J) - 1.0) <= 1e-12


def test_leapfrog_energy_drift_is_second_order():
    dw = DoubleWell()
    rng = np.random.default_rng(0)
    start = PhaseState(rng.uniform(-1.5, 1.5, (200, 1)), rng.standard_normal((200, 1)))
    h0 = hamiltonian(dw, start)

    def drift(eps):
        end = leapfrog(dw, start, 1.0, eps, 100)
        return np.mean(np.abs(hamiltonian(dw, end) - h0))

    assert drift(0.1) / drift(0.05) >= 3.5
    assert drift(0.05) / drift(0.025) >= 3.5


def test_leapfrog_matches_closed_form_on_quadratic():
    # one step of the linear map: [[1 - e^2/2, e], [-e + e^3/4, 1 - e^2/2]]
    e = 0.3
    s = leapfrog(quadratic(), PhaseState(np.array([0.7]), np.array([-0.2])), 1.0, e, 1)
    A = np.array([[1 - e**2 / 2, e], [-e + e**3 / 4, 1 - e**2 / 2]])
    np.testing.assert_allclose([s.theta[0], s.r[0]], A @ [0.7, -0.2], rtol=1e-14)


def test_leapfrog_noise_free_energy_over_long_run():
    q = quadratic()
    s = PhaseState(np.array([1.0]), np.array([0.0]))
    h0 = hamiltonian(q, s)
    worst = 0.0
    for _ in range(150):
        s = leapfrog(q, s, 1.0, 0.1, 100)
        worst = max(worst, abs(hamiltonian(q, s) - h0))
    assert worst <= 0.01 * h0


def test_leapfrog_divergence_carries_state():
    with pytest.raises(DivergenceError):
        leapfrog(quadratic(), PhaseState(np.array([1e200]), np.array([1e200])), 1.0, 1e200, 3)


# -- HMC -------------------------------------------------------------------

def test_hmc_acceptance_with_exact_gradients():
    chain = hmc_chain(quadratic(), np.zeros((200, 1)), HmcConfig(0.1, 50), 2000, seed=1)
    assert chain.acceptance_rate >= 0.97
    assert chain.acceptance_rate == pytest.approx(HMC_ACCEPTANCE_FIXTURE, abs=1e-5)


def test_hmc_mh_chi_square_goodness_of_fit():
    # 10^5 independent chains started far from the target; keep the last state
    chain = hmc_chain(quadratic(), np.full((100_000, 1), 2.5), HmcConfig(0.5, 1), 150, seed=3)
    x = chain.samples[-1, :, 0]
    edges = np.concatenate([[-np.inf], np.linspace(-2.5, 2.5, 19), [np.inf]])
    observed, _ = np.histogram(x, edges)
    expected = x.size * np.diff(stats.norm.cdf(edges))
    assert stats.chisquare(observed, expected).pvalue > 0.01
    assert 0.5 < chain.acceptance_rate < 1.0


def test_hmc_rejects_more_at_large_step():
    small = hmc_chain(quadratic(), np.zeros((100, 1)), HmcConfig(0.1, 10), 200, seed=2)
    big = hmc_chain(quadratic(), np.zeros((100, 1)), HmcConfig(1.5, 10), 200, seed=2)
    assert big.acceptance_rate < small.acceptance_rate


def test_naive_with_zero_noise_equals_hmc():
    cfg = HmcConfig(0.1, 20)
    init = np.zeros((4, 1))
    a = hmc_chain(DoubleWell(), init, cfg, 300, seed=9)
    b = naive_sghmc_chain(DoubleWell(), init, cfg, NoisyGradient(DoubleWell(), 0.0, rng=1), 300, seed=9)
    assert np.array_equal(a.samples, b.samples)
    assert a.accept_count == b.accept_count


def test_hmc_config_validation():
    with pytest.raises(ConfigurationError):
        HmcConfig(0.0)
    with pytest.raises(ConfigurationError):
        HmcConfig(0.1, m=0)
    with pytest.raises(ConfigurationError):
        HmcConfig(0.1, resample_every=0)


# -- SGHMC -----------------------------------------------------------------

def test_sghmc_without_friction_or_noise_is_a_plain_step():
    dw = DoubleWell()
    cfg = SghmcConfig(0.1, C=0.0, B_hat=0.0)
    s = PhaseState(np.array([0.4]), np.array([0.3]))
    out = sghmc_step(dw, s, cfg, ExactGradient(dw), np.random.default_rng(0))
    theta = 0.4 + 0.1 * 0.3
    assert out.theta[0] == theta
    assert out.r[0] == 0.3 - 0.1 * dw.grad(np.array([theta]))[0]


def test_sghmc_injected_noise_covariance():
    model = quadratic(2)
    cfg = SghmcConfig(0.01, C=[3.0, 3.0], B_hat=0.0)
    theta = np.tile([0.5, -0.3], (100_000, 1))
    state = PhaseState(theta, np.zeros_like(theta))
    out = sghmc_step(model, state, cfg, ExactGradient(model), np.random.default_rng(11))
    noise = out.r + 0.01 * model.grad(out.theta)  # r-drift removed (r starts at 0)
    np.testing.assert_allclose(np.cov(noise, rowvar=False), 0.06 * np.eye(2), atol=0.06 * 0.02)


def test_sghmc_dense_friction_noise_covariance():
    C = np.array([[2.0, 0.5], [0.5, 1.0]])
    B = np.array([[0.5, 0.1], [0.1, 0.2]])
    cfg = SghmcConfig(0.05, C=C, B_hat=B)
    model = quadratic(2)
    theta = np.zeros((100_000, 2))
    out = sghmc_step(model, PhaseState(theta, np.zeros_like(theta)), cfg, ExactGradient(model),
                     np.random.default_rng(12))
    np.testing.assert_allclose(np.cov(out.r, rowvar=False), 2 * 0.05 * (C - B), atol=2e-3)


def test_sghmc_config_rejects_bad_noise_estimate():
    with pytest.raises(ConfigurationError, match="not PSD"):
        SghmcConfig(0.1, C=1.0, B_hat=2.0)
    with pytest.raises(ConfigurationError):
        SghmcConfig(0.1, C=[[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(UnsupportedConfigurationError):
        SghmcConfig(0.1, C=[[1.0, 0.2], [0.2, 1.0]], B_hat="fisher")


def test_sghmc_stationary_variance_matches_lyapunov_oracle():
    eps, C, V = 0.1, 1.0, 1.0
    expected = linear_stationary_covariance(eps, C=C, V=V)[0, 0]
    init = np.random.default_rng(0).standard_normal((2000, 1))
    chain = sghmc_chain(quadratic(), init, SghmcConfig(eps, C=C), NoisyGradient(quadratic(), V, rng=1),
                        3000, seed=2, burn_in=500)
    assert chain.flat().var() == pytest.approx(expected, rel=0.01)


def test_lyapunov_oracle_closed_forms():
    # noise-free, frictionless: undefined stationary law
    with pytest.raises(ConfigurationError):
        linear_stationary_covariance(0.1, C=0.0, V=0.0)
    # independent oracle: iterate P <- A P A^T + Q to its fixed point
    for eps, C, V in ((0.1, 1.0, 0.0), (0.05, 2.0, 2.0), (0.2, 0.5, 1.0)):
        A = np.array([[1.0, eps], [-eps, 1.0 - eps * eps - eps * C]])
        Q = np.diag([0.0, eps * eps * V + 2.0 * C * eps])
        P = np.zeros((2, 2))
        for _ in range(20_000):
            P = A @ P @ A.T + Q
        np.testing.assert_allclose(linear_stationary_covariance(eps, C=C, V=V), P, rtol=1e-9)
    # with C = 1 and no gradient noise: Var(theta) = (4 - 2 eps) / (4 - 2 eps - eps^2)
    S = linear_stationary_covariance(0.1, C=1.0, V=0.0)
    assert S[0, 0] == pytest.approx(3.8 / 3.79, rel=1e-12)
    # unmatched gradient noise inflates the position variance
    assert linear_stationary_covariance(0.1, C=1.0, V=1.0)[0, 0] > S[0, 0]
    # the correction B_hat = eps V / 2 removes the inflation exactly
    fixed = linear_stationary_covariance(0.1, C=1.0, V=1.0, B_hat=0.05)
    assert fixed[0, 0] == pytest.approx(S[0, 0], rel=1e-12)


def test_sghmc_resampling_schedule_changes_path():
    init = np.zeros((1, 1))
    a = sghmc_chain(quadratic(), init, SghmcConfig(0.1), ExactGradient(quadratic()), 100, seed=3)
    b = sghmc_chain(quadratic(), init, SghmcConfig(0.1, resample_every=10), ExactGradient(quadratic()),
                    100, seed=3)
    assert np.array_equal(a.samples[:10], b.samples[:10])
    assert not np.array_equal(a.samples, b.samples)


def test_sghmc_divergence_keeps_prefix():
    with pytest.raises(DivergenceError) as info:
        sghmc_chain(quadratic(), np.ones(1), SghmcConfig(3.0, C=0.0), ExactGradient(quadratic()),
                    5000, seed=0)
    assert info.value.chain is not None
    assert np.all(np.isfinite(info.value.chain.samples))


# -- momentum form ---------------------------------------------------------

def test_reparameterize_examples():
    a = reparameterize(0.1, 1.0, 1.0, 0.0)
    assert a.eta == pytest.approx(0.01) and a.alpha == pytest.approx(0.1) and a.beta_hat == 0.0
    b = reparameterize(0.1, [4.0], [2.0])
    assert b.eta[0] == pytest.approx(0.0025) and b.alpha[0] == pytest.approx(0.05)


def test_reparameterize_rejects_dense():
    with pytest.raises(UnsupportedConfigurationError):
        reparameterize(0.1, [[2.0, 0.1], [0.1, 1.0]])


def test_momentum_form_validation():
    with pytest.raises(ConfigurationError):
        MomentumFormConfig(eta=0.0)
    with pytest.raises(ConfigurationError):
        MomentumFormConfig(eta=0.1, alpha=0.1, beta_hat=0.2)


def test_momentum_form_without_noise_is_deterministic():
    cfg = MomentumFormConfig(0.01, alpha=0.1, beta_hat=0.1)
    orc = ExactGradient(quadratic())
    a = momentum_form_step(np.ones(1), np.zeros(1), cfg, orc, np.random.default_rng(0))
    b = momentum_form_step(np.ones(1), np.zeros(1), cfg, orc, np.random.default_rng(1))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_momentum_form_with_zero_friction_is_sgd_momentum():
    orc = ExactGradient(DoubleWell())
    cfg = MomentumFormConfig(0.01, alpha=0.0, beta_hat=0.0)
    th, v = np.array([0.3]), np.array([0.0])
    th2, v2 = th.copy(), v.copy()
    rng = np.random.default_rng(0)
    for _ in range(500):
        th, v = momentum_form_step(th, v, cfg, orc, rng)
        th2, v2 = sgd_momentum_step(th2, v2, 0.01, 0.0, orc)
    assert np.array_equal(th, th2)


@pytest.mark.parametrize("mass", [1.0, 2.0, 4.0])
def test_formulations_bitwise_equal(mass):
    eps = 2.0**-4
    C, B = 1.5, 0.25
    model = DoubleWell()
    r0 = np.array([0.7])
    a = sghmc_chain(model, np.array([0.2]), SghmcConfig(eps, mass=mass, C=C, B_hat=B),
                    NoisyGradient(model, 1.0, rng=5), 2000, seed=6, init_momentum=r0)
    b = momentum_form_chain(model, np.array([0.2]), reparameterize(eps, mass, C, B),
                            NoisyGradient(model, 1.0, rng=5), 2000, seed=6, init_velocity=eps * r0 / mass)
    assert np.array_equal(a.samples, b.samples)


def test_zero_noise_sghmc_equals_inertial_descent():
    eps = 2.0**-3
    orc = ExactGradient(DoubleWell())
    a = sghmc_chain(DoubleWell(), np.array([0.5]), SghmcConfig(eps, C=0.0), orc, 400, seed=0,
                    init_momentum=np.array([0.0]))
    th, v = np.array([0.5]), np.array([0.0])
    path = []
    for _ in range(400):
        th, v = sgd_momentum_step(th, v, eps * eps, 0.0, orc)
        path.append(th)
    assert np.array_equal(a.samples, np.array(path))


def test_momentum_form_stationary_variance():
    init = np.random.default_rng(1).standard_normal((1000, 1))
    cfg = MomentumFormConfig(1e-4, alpha=0.01)
    chain = momentum_form_chain(quadratic(), init, cfg, ExactGradient(quadratic()), 2000, seed=2)
    assert chain.flat().var() == pytest.approx(1.0, rel=0.10)


# -- first-order methods ---------------------------------------------------

def test_sgld_zero_step_is_identity():
    th = np.array([0.3, -2.0])
    out = sgld_step(th, 0.0, ExactGradient(quadratic(2)), np.random.default_rng(0))
    assert np.array_equal(out, th)


def test_sgld_stationary_variance():
    # 10^5 chains x 100 steps = 10^7 updates started at the target. Over 100
    # steps the variance relaxes 18% of the way to the sampler's own
    # stationary value, so a mis-scaled noise term would show up clearly.
    init = np.random.default_rng(3).standard_normal((100_000, 1))
    chain = sgld_chain(quadratic(), init, 1e-3, ExactGradient(quadratic()), 100, seed=4)
    assert chain.samples[-1].var() == pytest.approx(1.0, abs=0.02)
    assert chain.flat().var() == pytest.approx(1.0, abs=0.02)
    # halving the injected noise drags the variance down measurably
    wrong = init.copy()
    rng = np.random.default_rng(5)
    for _ in range(100):
        wrong = wrong - 1e-3 * wrong + np.sqrt(1e-3) * rng.standard_normal(wrong.shape)
    assert wrong.var() < 0.95


def test_sgld_random_walk_versus_sghmc_momentum():
    model = correlated_gaussian(0.9)
    orc = NoisyGradient(model, 1.0, rng=0)
    init = np.zeros((200, 2))
    sgld = sgld_chain(model, init, 0.01, orc, 50, seed=1).samples
    sghmc = sghmc_chain(model, init, SghmcConfig(0.01, C=1.0), orc, 50, seed=1).samples
    a = np.mean([direction_autocorrelation(sgld[:, i]) for i in range(200)])
    b = np.mean([direction_autocorrelation(sghmc[:, i]) for i in range(200)])
    assert abs(a) < 0.1
    assert b > 0.5


def test_sgd_converges_on_quadratic():
    th = np.array([3.0])
    orc = ExactGradient(quadratic())
    for _ in range(200):
        th = sgd_step(th, 0.1, orc)
    assert abs(th[0]) <= 1e-6
    assert np.array_equal(sgd_step(th, 0.0, orc), th)


def _steps_to_converge(step, tol=1e-6, limit=100_000):
    th, v = np.array([1.0]), np.array([0.0])
    for k in range(limit):
        th, v = step(th, v)
        if abs(th[0]) <= tol and abs(v[0]) <= tol:
            return k + 1
    return limit


def test_momentum_converges_faster_than_sgd():
    orc = ExactGradient(quadratic())
    eta = 1e-3
    plain = _steps_to_converge(lambda th, v: (sgd_step(th, eta, orc), v))
    heavy = _steps_to_converge(lambda th, v: sgd_momentum_step(th, v, eta, 0.01, orc))
    assert heavy < plain


def test_schedules():
    s = linear_decay(0.1, 0.01, 10)
    assert s(0) == 0.1 and s(9) == pytest.approx(0.01) and s(100) == pytest.approx(0.01)
    d = inverse_decay(1.0, 1.0, 0.55)
    assert d(0) == 1.0 and d(10) < d(1)


# -- determinism -----------------------------------------------------------

def _all_runs(seed):
    dw = DoubleWell()
    init = np.zeros((3, 1))
    return [
        hmc_chain(dw, init, HmcConfig(0.1, 5), 50, seed=seed).samples,
        naive_sghmc_chain(dw, init, HmcConfig(0.1, 5), NoisyGradient(dw, 4.0, rng=seed), 50, seed=seed).samples,
        sghmc_chain(dw, init, SghmcConfig(0.1, C=3.0), NoisyGradient(dw, 4.0, rng=seed), 50, seed=seed).samples,
        momentum_form_chain(dw, init, MomentumFormConfig(0.01, 0.1), NoisyGradient(dw, 4.0, rng=seed), 50,
                            seed=seed).samples,
        sgld_chain(dw, init, 0.01, NoisyGradient(dw, 4.0, rng=seed), 50, seed=seed).samples,
    ]


def test_seeded_runs_are_bitwise_reproducible():
    for a, b in zip(_all_runs(17), _all_runs(17)):
        assert np.array_equal(a, b)
    assert not np.array_equal(_all_runs(17)[0], _all_runs(18)[0])


def test_mass_matrix_draws_have_mass_covariance():
    M = MassMatrix([[2.0, 0.6], [0.6, 1.0]])
    r = M.sample_momentum(np.random.default_rng(0), (200_000, 2))
    np.testing.assert_allclose(np.cov(r, rowvar=False), M.value, atol=0.02)
