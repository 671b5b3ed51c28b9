import math

import numpy as np
import pytest

import oracles
from krcps import IntervalBundle, calibrated_quantiles
from krcps import synth
from krcps.synth import GaussianModel, SdeConfig


def test_degenerate_prior():
    m = GaussianModel(np.array([1.0, -2.0]), 0.0, np.array([0.5, 0.5]))
    x, _ = synth.draw_pairs(m, 100, 0)
    assert np.all(x == m.prior_mean)


def test_y_mean_clt():
    m = GaussianModel(np.array([0.5, -1.0, 2.0]), 1.0, np.array([0.5, 0.2, 0.8]))
    _, y = synth.draw_pairs(m, 100_000, 1)
    tol = 4 * np.sqrt((1.0 + m.noise_var) / 100_000)
    assert np.all(np.abs(y.mean(axis=0) - m.prior_mean) <= tol)


def test_pairs_deterministic():
    m = GaussianModel.isotropic(4)
    a = synth.draw_pairs(m, 10, 5)
    b = synth.draw_pairs(m, 10, 5)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_posterior_moments():
    m = GaussianModel(np.zeros(3), 1.0, np.array([0.5, 0.2, 0.8]))
    y = np.array([1.0, -0.5, 2.0])
    s = synth.exact_posterior_sampler(m, y, 100_000, 2)
    assert s.shape == (100_000, 3)
    assert np.allclose(m.posterior_var, np.array([1 / 3, 1 / 6, 0.8 / 1.8]))
    rel = np.abs(s.var(axis=0, ddof=1) / m.posterior_var - 1)
    assert np.all(rel <= 4 * math.sqrt(2 / 100_000))
    se = np.sqrt(m.posterior_var / 100_000)
    assert np.all(np.abs(s.mean(axis=0) - m.posterior_mean(y)) <= 4 * se)


def test_noiseless_limit():
    m = GaussianModel(np.zeros(2), 1.0, np.full(2, 1e-14))
    y = np.array([0.3, -1.2])
    s = synth.exact_posterior_sampler(m, y, 1000, 0)
    assert np.all(np.abs(s - y) < 1e-5)


def test_batched_sampler_shape():
    m = GaussianModel.isotropic(5)
    assert synth.exact_posterior_sampler(m, np.zeros((7, 5)), 11, 0).shape == (7, 11, 5)


def test_expected_risk_at_zero_is_rank_mass():
    m = GaussianModel.isotropic(4, 0.0, 1.0, 0.5)
    # a fresh exchangeable draw lands below rank 6 or above rank 123 of 128 w.p. 12/129
    assert synth.calibrated_true_risk(m, 128, 0.1, np.zeros(4)) == pytest.approx(12 / 129, abs=1e-9)


@pytest.mark.parametrize("misspecified", [False, True])
def test_oracle_matches_monte_carlo(misspecified):
    rng = np.random.default_rng(0)
    d = 5
    truth = GaussianModel(rng.normal(size=d) * 0.3, 1.0, rng.uniform(0.2, 0.8, size=d))
    sampler = GaussianModel(np.zeros(d), 1.3, np.full(d, 0.5)) if misspecified else truth
    lam = rng.uniform(0, 0.4, size=d)
    exact = synth.calibrated_true_risk(truth, 64, 0.1, lam, sampler)
    mc, se = oracles.mc_true_risk(truth, sampler, 64, 0.1, lam, 200_000, 1)
    assert abs(exact - mc) <= 3 * se


def test_oracle_matches_sampled_bundles():
    # same check through the package's own quantile code, smaller scale
    truth = GaussianModel(np.zeros(3), 1.0, np.array([0.2, 0.5, 0.8]))
    x, y = synth.draw_pairs(truth, 40_000, 3)
    b = calibrated_quantiles(synth.exact_posterior_sampler(truth, y, 32, 4), 0.2)
    lam = np.array([0.0, 0.1, 0.3])
    per_pair = ((x < b.lower - lam) | (x > b.upper + lam)).mean(axis=1)
    exact = synth.calibrated_true_risk(truth, 32, 0.2, lam)
    assert abs(per_pair.mean() - exact) <= 3 * per_pair.std() / math.sqrt(x.shape[0])


def test_conditional_miss_probability():
    truth = GaussianModel(np.zeros(2), 1.0, np.array([0.3, 0.6]))
    y = np.array([0.4, -1.0])
    b = IntervalBundle([-0.5, -1.5], [0.9, 0.2])
    lam = np.array([0.1, 0.0])
    s = synth.exact_posterior_sampler(truth, y, 400_000, 9)
    mc = ((s < b.lower - lam) | (s > b.upper + lam)).mean(axis=1)
    p = synth.posterior_miss_probability(truth, y, b, lam)
    assert abs(mc.mean() - p) <= 3 * mc.std() / math.sqrt(mc.size)


def test_true_risk_rejects_negative():
    with pytest.raises(ValueError):
        synth.calibrated_true_risk(GaussianModel.isotropic(2), 64, 0.1, [-0.1, 0.0])


CFG = SdeConfig(0.01, 1.0, math.sqrt(0.5), 1000)


def test_sigma_endpoints_exact():
    for smin, smax in [(0.01, 1.0), (0.002, 50.0), (0.3, 0.7), (1e-3, 3.0)]:
        c = SdeConfig(smin, smax, smax, 10)
        assert c.sigma(0.0) == smin and c.sigma(1.0) == smax
    assert CFG.sigma(CFG.t0) == pytest.approx(math.sqrt(0.5), rel=1e-12)


def test_sde_config_validation():
    with pytest.raises(ValueError):
        SdeConfig(1.0, 0.5, 0.7, 10)
    with pytest.raises(ValueError):
        SdeConfig(0.01, 1.0, 2.0, 10)
    with pytest.raises(ValueError):
        SdeConfig(0.01, 1.0, 0.5, 0)


def test_score_basics():
    m = GaussianModel(np.array([1.0, -1.0, 0.5]), 1.0, np.full(3, 0.5))
    assert np.all(synth.analytic_score(m, CFG, m.prior_mean, 0.3) == 0)
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(2, 3))
    lhs = synth.analytic_score(m, CFG, m.prior_mean + 2 * a - 3 * b, 0.6)
    rhs = 2 * synth.analytic_score(m, CFG, m.prior_mean + a, 0.6) - 3 * synth.analytic_score(m, CFG, m.prior_mean + b, 0.6)
    assert np.allclose(lhs, rhs, atol=1e-14)
    with pytest.raises(ValueError):
        synth.analytic_score(m, CFG, a, 1.5)


def test_score_finite_difference():
    m = GaussianModel(np.array([0.3, -0.7]), 1.0, np.full(2, 0.5))
    rng = np.random.default_rng(1)

    def logp(x, t):
        v = m.prior_var + float(CFG.sigma(t)) ** 2
        return float(np.sum(-0.5 * (x - m.prior_mean) ** 2 / v - 0.5 * np.log(2 * np.pi * v)))

    h = 1e-5
    for _ in range(100):
        x = rng.normal(size=2) * 2
        t = rng.uniform()
        s = synth.analytic_score(m, CFG, x, t)
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            fd = (logp(x + e, t) - logp(x - e, t)) / (2 * h)
            assert fd == pytest.approx(s[j], rel=1e-6, abs=1e-9)


def test_sde_single_step():
    m = GaussianModel.isotropic(3)
    cfg = SdeConfig(0.01, 1.0, 1.0, 1)
    y = np.array([0.2, -0.4, 1.0])
    out = synth.reverse_sde_sample(y, synth.GaussianScore(m, cfg), cfg, seed=4)
    g2 = 2 * math.log(100.0)
    z = synth.path_rng(4, 0).standard_normal((1, 3))[0]
    # the likelihood term vanishes because x = y at the first step
    want = y + g2 * synth.analytic_score(m, cfg, y, 1.0) + math.sqrt(g2) * z
    assert np.allclose(out, want, rtol=0, atol=1e-14)


def test_sde_zero_steps_returns_y():
    m = GaussianModel.isotropic(2)
    cfg = SdeConfig(0.01, 1.0, 0.5, 1)
    y = np.array([0.1, 0.2])
    assert np.array_equal(synth.reverse_sde_sample(y, synth.GaussianScore(m, cfg), cfg, 0), y)


def test_sde_deterministic_and_batch_equals_single():
    m = GaussianModel.isotropic(4)
    cfg = SdeConfig(0.01, 1.0, math.sqrt(0.5), 200)
    score = synth.GaussianScore(m, cfg)
    y = np.array([0.5, -0.2, 0.0, 1.0])
    a = synth.reverse_sde_sample(y, score, cfg, 7, path=3)
    b = synth.reverse_sde_sample(y, score, cfg, 7, path=3)
    assert np.array_equal(a, b)
    batch = synth.reverse_sde_sample_batch(y, score, cfg, 7, 10, chunk=4)
    for p in range(10):
        assert np.array_equal(batch[p], synth.reverse_sde_sample(y, score, cfg, 7, path=p))


def _chain_moments(cfg, tau2, y, likelihood_term):
    """Exact mean and variance of the Euler-Maruyama chain for a 1-D Gaussian prior at 0."""
    n = math.floor(cfg.t0 * cfg.steps + 1e-12)
    dt, L, s0_2 = 1.0 / cfg.steps, 2 * math.log(cfg.sigma_max / cfg.sigma_min), cfg.sigma0**2
    mean, var = y, 0.0
    for i in range(n, 0, -1):
        s2 = float(cfg.sigma(i * dt)) ** 2
        a, b = 1 - s2 * L * dt / (tau2 + s2), 0.0
        if likelihood_term:
            gap = max(s0_2 - s2, 1e-8 * s0_2)
            a -= s2 * L * dt / gap
            b = s2 * L * dt * y / gap
        mean, var = a * mean + b, a * a * var + s2 * L * dt
    return mean, var


@pytest.mark.parametrize("likelihood_term", [True, False])
def test_sde_matches_its_own_moment_recursion(likelihood_term):
    m = GaussianModel.isotropic(1, 0.0, 1.0, 0.5)
    cfg = SdeConfig(0.01, 1.0, math.sqrt(0.5), 300)
    y = np.array([1.0])
    s = synth.reverse_sde_sample_batch(y, synth.GaussianScore(m, cfg), cfg, 0, 4000, likelihood_term=likelihood_term)
    mean, var = _chain_moments(cfg, 1.0, 1.0, likelihood_term)
    assert abs(s.mean() - mean) <= 4 * math.sqrt(var / 4000)
    assert abs(s.var(ddof=1) / var - 1) <= 4 * math.sqrt(2 / 4000)


def test_sde_without_correction_targets_posterior():
    d = 2
    m = GaussianModel.isotropic(d, 0.0, 1.0, 0.5)
    cfg = SdeConfig(0.01, 1.0, math.sqrt(0.5), 500)
    y = np.array([1.0, -0.5])
    s = synth.reverse_sde_sample_batch(y, synth.GaussianScore(m, cfg), cfg, 0, 2048, likelihood_term=False)
    se = np.sqrt(m.posterior_var / 2048)
    assert np.all(np.abs(s.mean(axis=0) - m.posterior_mean(y)) <= 4 * se + 0.02)
    assert np.all(np.abs(s.var(axis=0, ddof=1) / m.posterior_var - 1) <= 0.1)


def test_sde_with_correction_is_pulled_toward_y():
    # in the continuous limit the chain settles near mean 0.811 y and variance 0.134 here
    mean, var = _chain_moments(SdeConfig(0.01, 1.0, math.sqrt(0.5), 20_000), 1.0, 1.0, True)
    assert mean == pytest.approx(0.811, abs=2e-3) and var == pytest.approx(0.1344, abs=2e-3)
    mean0, var0 = _chain_moments(SdeConfig(0.01, 1.0, math.sqrt(0.5), 20_000), 1.0, 1.0, False)
    assert mean0 == pytest.approx(2 / 3, abs=1e-3) and var0 == pytest.approx(1 / 3, abs=1e-3)


def test_fig1_toy():
    a = synth.fig1_toy([-2, 0.75], 64, 1)
    assert np.array_equal(a, synth.fig1_toy([-2, 0.75], 64, 1))
    assert a.shape == (64, 2)
    with pytest.raises(ValueError):
        synth.fig1_toy([0, 0, 0], 5, 0)


def test_fig1_true_risk():
    from scipy.stats import norm

    r = synth.fig1_true_risk([-1, 1], [0.5, 0.5])
    want = 0.5 * ((norm.cdf(-1.5 + 1) + norm.sf(1.5 + 1)) + (norm.cdf(-1.5 - 1) + norm.sf(1.5 - 1)))
    assert r == pytest.approx(want, abs=1e-14)
