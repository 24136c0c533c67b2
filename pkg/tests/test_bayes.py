import gzip
import struct

import numpy as np
import pytest
from scipy import integrate, stats

from conftest import central_diff
from sghmc.bayes import (BnnModel, PmfModel, Ratings, RunConfig, bnn_minibatch_grad,
                         bnn_sampling_run, gamma_posterior, gibbs_lambda, load_idx, load_ratings,
                         make_blobs, make_ratings, pmf_minibatch_grad, pmf_rmse, pmf_sampling_run)
from sghmc.errors import ConfigurationError, EmptyDatasetError
from sghmc.models import MinibatchGradient


def small_bnn(seed=0, n=30, d=4, K=3, h=5, lambdas=(0.7, 1.3, 0.5, 2.0)):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    y = rng.integers(0, K, n)
    return BnnModel(X, y, K, hidden=h, lambdas=lambdas)


def full_neg_log_post(model, theta):
    return float(model.data_potential(theta, np.arange(model.n_data)) + model.prior_potential(theta))


# -- classifier ------------------------------------------------------------

def test_bnn_gradient_matches_finite_differences():
    model = small_bnn()
    rng = np.random.default_rng(1)
    for _ in range(10):
        theta = rng.standard_normal(model.dim)
        g = bnn_minibatch_grad(model, theta, model.X, model.y)
        fd = central_diff(lambda t: full_neg_log_post(model, t), theta)
        assert np.max(np.abs(g - fd)) <= 1e-4 * max(1.0, np.max(np.abs(fd)))
        np.testing.assert_allclose(model.grad(theta), g, rtol=1e-12)


def test_bnn_output_bias_gradient_at_zero_weights():
    X = np.random.default_rng(2).standard_normal((12, 3))
    balanced = BnnModel(X, np.arange(12) % 3, 3, hidden=4)
    g = balanced.unpack(balanced.batch_grad(np.zeros(balanced.dim), X, balanced.y))["a"]
    np.testing.assert_allclose(g, 0.0, atol=1e-12)
    y = np.array([0] * 6 + [1] * 4 + [2] * 2)
    skewed = BnnModel(X, y, 3, hidden=4)
    g = skewed.unpack(skewed.batch_grad(np.zeros(skewed.dim), X, y))["a"]
    np.testing.assert_allclose(g, 12 / 3 - np.array([6, 4, 2]), atol=1e-12)


def test_bnn_prior_dominates_for_large_precision():
    model = small_bnn(lambdas=(1e8, 1.0, 1.0, 1.0))
    theta = np.random.default_rng(3).standard_normal(model.dim)
    gA = model.unpack(bnn_minibatch_grad(model, theta, model.X, model.y))["A"].ravel()
    A = model.unpack(theta)["A"].ravel()
    cos = gA @ A / (np.linalg.norm(gA) * np.linalg.norm(A))
    assert cos > 1 - 1e-8


def test_bnn_label_checks():
    with pytest.raises(ValueError):
        BnnModel(np.zeros((3, 2)), [0, 1, 3], n_classes=3)
    model = small_bnn()
    with pytest.raises(ValueError):
        bnn_minibatch_grad(model, np.zeros(model.dim), model.X[:2], [0, 5])
    with pytest.raises(EmptyDatasetError):
        bnn_minibatch_grad(model, np.zeros(model.dim), np.zeros((0, 4)), [])


def test_bnn_minibatch_unbiased_over_all_batches():
    model = small_bnn(n=6)
    theta = np.random.default_rng(4).standard_normal(model.dim)
    orc = MinibatchGradient(model, 2, rng=0)
    import itertools
    mean = np.mean([orc.estimate(theta, list(s)) for s in itertools.combinations(range(6), 2)], axis=0)
    np.testing.assert_allclose(mean, model.grad(theta), atol=1e-12)


def test_bnn_per_example_gradients_sum_to_batch():
    model = small_bnn()
    theta = np.random.default_rng(5).standard_normal(model.dim)
    per = model.example_grads(theta, np.arange(10))
    np.testing.assert_allclose(per.sum(0), model.data_grad(theta, np.arange(10)), atol=1e-12)


def test_make_blobs_shapes_and_balance():
    data = make_blobs(n_train=600, n_test=300, dim=5, n_classes=3, seed=1)
    assert data.X_train.shape == (600, 5) and data.X_test.shape == (300, 5)
    counts = np.bincount(np.concatenate([data.y_train, data.y_test]))
    assert counts.tolist() == [300, 300, 300]


def test_load_idx_round_trip(tmp_path):
    arr = np.arange(24, dtype=np.uint8).reshape(2, 3, 4)
    raw = struct.pack(">HBB", 0, 0x08, 3) + struct.pack(">III", 2, 3, 4) + arr.tobytes()
    (tmp_path / "a.idx").write_bytes(raw)
    with gzip.open(tmp_path / "a.idx.gz", "wb") as fh:
        fh.write(raw)
    assert np.array_equal(load_idx(tmp_path / "a.idx"), arr)
    assert np.array_equal(load_idx(tmp_path / "a.idx.gz"), arr)
    (tmp_path / "bad").write_bytes(b"\x01\x00\x08\x01")
    with pytest.raises(ValueError):
        load_idx(tmp_path / "bad")


# -- Gibbs precision updates --------------------------------------------------

@pytest.mark.parametrize("n", [1, 10, 100])
def test_gibbs_zero_block_mean(n):
    rng = np.random.default_rng(n)
    draws = [gibbs_lambda(np.zeros(n), rng=rng) for _ in range(100_000)]
    assert np.mean(draws) == pytest.approx(1 + n / 2, rel=0.02)


def test_gibbs_empty_block_is_prior():
    assert gamma_posterior(np.zeros(0)) == (1.0, 1.0)


def test_gibbs_posterior_mean_decreases_with_norm():
    n = 8
    means = []
    for sq in (1.0, 10.0, 100.0):
        w = np.full(n, np.sqrt(sq / n))
        shape, rate = gamma_posterior(w, convention="gaussian")
        assert shape / rate == pytest.approx((1 + n / 2) / (1 + sq / 2))
        shape, rate = gamma_posterior(w)
        assert shape / rate == pytest.approx((1 + n / 2) / (1 + sq))
        means.append(shape / rate)
    assert means[0] > means[1] > means[2]


def test_gibbs_rejects_bad_inputs():
    with pytest.raises(ConfigurationError):
        gamma_posterior(np.ones(2), convention="other")
    with pytest.raises(ConfigurationError):
        gamma_posterior(np.ones(2), prior_shape=0.0)
    with pytest.raises(ValueError):
        gamma_posterior(np.array([np.nan]))


def conjugate_toy_marginal(y, shape=1.0, rate=1.0):
    """Posterior CDF of lam for w ~ exp(-lam w^2), y_i ~ N(w, 1), lam ~ Gamma(shape, rate).

    Integrating out w: ybar ~ N(0, 1/(2 lam) + 1/n).
    """
    n, ybar = len(y), float(np.mean(y))

    def dens(lam):
        return stats.gamma.pdf(lam, shape, scale=1 / rate) * stats.norm.pdf(
            ybar, scale=np.sqrt(1 / (2 * lam) + 1 / n))

    z = integrate.quad(dens, 0, np.inf)[0]
    return lambda x: np.array([integrate.quad(dens, 0, v)[0] / z for v in np.atleast_1d(x)])


def test_gibbs_conjugate_toy_ks():
    y = np.array([0.8, 1.4, 0.3])
    n = len(y)
    rng = np.random.default_rng(21)
    lam, draws = 1.0, []
    for _ in range(100_000):
        prec = 2 * lam + n  # exact conditional for the single weight
        w = rng.normal(y.sum() / prec, 1 / np.sqrt(prec))
        lam = gibbs_lambda(np.array([w]), rng=rng)
        draws.append(lam)
    cdf = conjugate_toy_marginal(y)
    grid = np.quantile(draws, np.linspace(0.005, 0.995, 199))
    ks = np.max(np.abs(cdf(grid) - np.searchsorted(np.sort(draws), grid, side="right") / len(draws)))
    assert ks <= 0.02


# -- matrix factorization ------------------------------------------------------

def toy_pmf(seed=0):
    rng = np.random.default_rng(seed)
    users, items = np.divmod(rng.choice(20, 12, replace=False), 4)
    r = Ratings(users, items, rng.normal(3, 1, 12))
    return PmfModel(r, 5, 4, rank=3, tau=1.5, lambdas=(0.5, 1.5, 0.8, 1.2))


def test_pmf_gradient_matches_finite_differences():
    model = toy_pmf()
    rng = np.random.default_rng(1)
    for _ in range(10):
        theta = rng.standard_normal(model.dim)
        g = pmf_minibatch_grad(model, theta, model.ratings)
        fd = central_diff(lambda t: full_neg_log_post(model, t), theta)
        assert np.max(np.abs(g - fd)) <= 1e-4 * max(1.0, np.max(np.abs(fd)))


def test_pmf_single_rating_locality():
    model = toy_pmf()
    theta = np.random.default_rng(2).standard_normal(model.dim)
    one = model.ratings.subset([0])
    lik = model.unpack(model.batch_grad(theta, one))
    i, j = one.users[0], one.items[0]
    for name, row in (("U", i), ("a", i), ("V", j), ("b", j)):
        block = lik[name]
        mask = np.ones(block.shape[0], bool)
        mask[row] = False
        assert np.all(block[mask] == 0) and np.any(block[row] != 0)
    full = pmf_minibatch_grad(model, theta, one) - model.prior_grad(theta)
    np.testing.assert_allclose(full, model.n_data * model.batch_grad(theta, one))


def test_pmf_perfect_reconstruction_has_zero_likelihood_gradient():
    model = toy_pmf()
    theta = np.random.default_rng(3).standard_normal(model.dim)
    r = model.ratings
    exact = Ratings(r.users, r.items, model.predict(theta, r.users, r.items))
    np.testing.assert_allclose(model.batch_grad(theta, exact), 0.0, atol=1e-12)
    assert pmf_rmse(model, theta, exact) == pytest.approx(0.0, abs=1e-12)


def test_pmf_index_checks():
    model = toy_pmf()
    with pytest.raises(ValueError):
        pmf_minibatch_grad(model, np.zeros(model.dim), Ratings([9], [0], [1.0]))
    with pytest.raises(EmptyDatasetError):
        pmf_rmse(model, np.zeros(model.dim), Ratings([], [], []))


def test_global_mean_predictor_rmse_is_rating_spread():
    data = make_ratings(seed=3)
    mean = data.train.values.mean()
    dev2 = (data.test.values - mean) ** 2
    rmse = np.sqrt(dev2.mean())
    pooled = np.concatenate([data.train.values, data.test.values])
    se = dev2.std() / (2 * rmse * np.sqrt(dev2.size))
    assert abs(rmse - pooled.std()) <= 3 * se
    # over many instances the spread is sqrt(rank + 1/tau): N(0, 1) latents, unit noise
    var = np.mean([np.concatenate([d.train.values, d.test.values]).var()
                   for d in (make_ratings(seed=s) for s in range(40))])
    assert var == pytest.approx(6.0, rel=0.1)


def test_load_ratings_formats(tmp_path):
    (tmp_path / "r.csv").write_text("user,item,rating\n10,a,4\n11,b,3.5\n10,b,1\n")
    (tmp_path / "r.dat").write_text("1::7::5::978300760\n2::7::3::978300761\n")
    a = load_ratings(tmp_path / "r.csv")
    assert a.users.tolist() == [0, 1, 0] and a.items.tolist() == [0, 1, 1]
    assert a.values.tolist() == [4.0, 3.5, 1.0]
    b = load_ratings(tmp_path / "r.dat")
    assert len(b) == 2 and b.items.tolist() == [0, 0]


# -- run loops ---------------------------------------------------------------

def tiny_blobs():
    return make_blobs(n_train=300, n_test=100, dim=5, n_classes=3, clusters_per_class=1, seed=2)


def test_zero_friction_sghmc_run_is_sgd_momentum():
    data = tiny_blobs()
    a = bnn_sampling_run(data, RunConfig("sghmc", eta=1e-4, alpha=0.0, beta_hat=0.0, batch_size=50,
                                         n_epochs=3, gibbs=False, burn_in=0), hidden=6, seed=4)
    b = bnn_sampling_run(data, RunConfig("sgd_momentum", eta=1e-4, alpha=0.0, batch_size=50,
                                         n_epochs=3, gibbs=False), hidden=6, seed=4)
    assert np.array_equal(a.final, b.final)


def test_burn_in_discards_early_samples():
    data = tiny_blobs()
    res = bnn_sampling_run(data, RunConfig("sgld", eta=1e-4, batch_size=50, n_epochs=4, burn_in=7),
                           hidden=6, seed=1)
    assert len(res.samples) == 4 * 6 - 7
    assert res.trace.shape == (4,) and res.lambdas.shape == (4, 4)


def test_application_runs_are_deterministic():
    data = tiny_blobs()
    cfg = RunConfig("sghmc", eta=1e-4, alpha=0.1, batch_size=50, n_epochs=3, burn_in=2)
    a = bnn_sampling_run(data, cfg, hidden=6, seed=9)
    b = bnn_sampling_run(data, cfg, hidden=6, seed=9)
    assert np.array_equal(a.samples, b.samples) and np.array_equal(a.trace, b.trace)
    rd = make_ratings(n_users=30, n_items=20, density=0.3, seed=1)
    pc = RunConfig("sgld", eta=1e-3, batch_size=40, n_epochs=3, burn_in=2)
    assert np.array_equal(pmf_sampling_run(rd, pc, seed=3).samples, pmf_sampling_run(rd, pc, seed=3).samples)


def test_run_config_validation():
    with pytest.raises(ConfigurationError):
        RunConfig("adam")
    with pytest.raises(ConfigurationError):
        RunConfig("sgd", eta=0.0)


@pytest.mark.slow
def test_posterior_average_beats_last_sample():
    data = make_ratings(seed=0)
    res = pmf_sampling_run(data, RunConfig("sghmc", eta=3e-3, alpha=0.1, batch_size=400,
                                           n_epochs=300, burn_in=100), seed=0)
    model = PmfModel(data.train, data.n_users, data.n_items)
    averaged = pmf_rmse(model, res.samples, data.test)
    last = pmf_rmse(model, res.samples[-1], data.test)
    assert averaged <= last
    assert res.trace[-1] == pytest.approx(averaged, rel=1e-12)
