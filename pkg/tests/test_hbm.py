import math

import numpy as np
import pytest
from scipy.special import expit

from hobm import decomposition, distribution, hbm, lattice, verify
from hobm.errors import NonConvergenceError, UsageError
from hobm.lattice import Outcome

LOG3 = math.log(3)


def random_model(seed, n, k, scale=1.0):
    rng = np.random.default_rng(seed)
    return hbm.HbmModel(n, k, rng.uniform(-scale, scale, lattice.index_set_size(n, k)), 0.0).normalize()


def random_dist(seed, n):
    u = np.random.default_rng(seed).random(1 << n) + 1e-3
    return distribution.DenseDistribution(u / u.sum())


def single(theta1):
    return hbm.HbmModel(1, 1, [theta1], 0.0)


def naive_log_prob(m, x):
    return sum(t for s, t in zip(m.masks, m.theta_b) if (int(s) & x) == int(s))


# -- model ---------------------------------------------------------------------


def test_model_shape_checks():
    with pytest.raises(UsageError):
        hbm.HbmModel(3, 2, np.zeros(5), 0.0)
    with pytest.raises(UsageError):
        hbm.HbmModel(2, 2, [np.nan, 0, 0], 0.0)
    m = hbm.HbmModel.uniform(4, 2)
    assert m.param_count == 10
    assert m.theta_bottom == pytest.approx(-4 * math.log(2))
    assert [o.bits for o in m.index_set] == list(m.masks)


def test_theta_full_is_zero_off_model():
    m = random_model(1, 5, 2)
    full = m.theta_full()
    off = lattice.popcounts(5) > 2
    assert np.all(full[off] == 0)
    assert full[0] == m.theta_bottom


def test_normalized_model_matches_theta_coordinates():
    m = random_model(2, 4, 3)
    t = distribution.ThetaCoordinates(m.theta_full())
    assert t.is_normalized
    np.testing.assert_allclose(distribution.p_from_theta(t).probs, m.distribution().probs, atol=1e-12)


# -- unnormalized log prob / Z / eta ---------------------------------------------


def test_unnormalized_log_prob_examples():
    m = hbm.HbmModel.uniform(3, 3)
    assert all(hbm.unnormalized_log_prob(m, x) == 0 for x in range(8))
    a, b, c = 0.3, -1.1, 0.7
    m = hbm.HbmModel(2, 2, [a, b, c], 0.0)
    assert hbm.unnormalized_log_prob(m, Outcome.from_vars([0, 1], 2)) == pytest.approx(a + b + c)
    m = random_model(3, 4, 4)
    for x in range(16):
        assert hbm.unnormalized_log_prob(m, x) == pytest.approx(naive_log_prob(m, x), abs=1e-12)
        assert m.log_potentials[x] == pytest.approx(naive_log_prob(m, x), abs=1e-12)


def test_unnormalized_log_prob_rejects_other_n():
    with pytest.raises(UsageError):
        hbm.unnormalized_log_prob(hbm.HbmModel.uniform(3, 1), Outcome(0, 4))


def test_exact_log_z_examples():
    assert hbm.exact_log_z(hbm.HbmModel.uniform(4, 2)) == pytest.approx(4 * math.log(2))
    assert hbm.exact_log_z(single(LOG3)) == pytest.approx(math.log(4))
    m = random_model(4, 6, 3)
    naive = sum(math.exp(naive_log_prob(m, x)) for x in range(64))
    assert math.exp(hbm.exact_log_z(m)) == pytest.approx(naive, rel=1e-12)


def test_exact_eta_examples():
    e = hbm.exact_eta(hbm.HbmModel.uniform(3, 2)).eta
    np.testing.assert_allclose(e, 2.0 ** -lattice.popcounts(3), atol=1e-15)
    assert hbm.exact_eta(single(LOG3)).eta[1] == pytest.approx(0.75)
    m = random_model(5, 5, 3)
    np.testing.assert_allclose(hbm.exact_eta(m).eta, distribution.eta_from_p(m.distribution()).eta, atol=1e-14)


# -- Gibbs -------------------------------------------------------------------------


def test_gibbs_conditional_examples():
    assert hbm.gibbs_conditional(hbm.HbmModel.uniform(3, 2), 0b110, 0) == 0.5
    assert hbm.gibbs_conditional(single(LOG3), 0, 0) == pytest.approx(0.75)
    c = 1.3
    m = hbm.HbmModel(2, 2, [0.0, 0.0, c], 0.0)
    assert hbm.gibbs_conditional(m, 0b10, 0) == pytest.approx(expit(c))
    assert hbm.gibbs_conditional(m, 0b00, 0) == pytest.approx(0.5)


def test_gibbs_conditional_ignores_own_bit():
    m = random_model(6, 4, 3)
    for x in range(16):
        for i in range(4):
            assert hbm.gibbs_conditional(m, x, i) == hbm.gibbs_conditional(m, x ^ (1 << i), i)


def test_gibbs_conditional_matches_joint_ratio():
    m = random_model(7, 4, 4)
    p = m.distribution().probs
    for x in range(16):
        for i in range(4):
            on, off = x | (1 << i), x & ~(1 << i)
            assert hbm.gibbs_conditional(m, x, i) == pytest.approx(p[on] / (p[on] + p[off]), abs=1e-12)


def test_gibbs_conditional_bad_index():
    with pytest.raises(UsageError):
        hbm.gibbs_conditional(hbm.HbmModel.uniform(2, 1), 0, 2)


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_gibbs_kernel_stationary(n):
    m = random_model(10 + n, n, n)
    p = m.distribution().probs
    T = hbm.gibbs_kernel(m)
    np.testing.assert_allclose(T.sum(axis=1), 1.0, atol=1e-14)
    assert np.abs(p @ T - p).max() < 1e-12


def test_gibbs_config_validation():
    with pytest.raises(UsageError):
        hbm.GibbsConfig(num_samples=0)
    with pytest.raises(UsageError):
        hbm.GibbsConfig(temperature=2.0)


def test_gibbs_uniform_site_means():
    samples = hbm.gibbs_sample(hbm.HbmModel.uniform(4, 2), hbm.GibbsConfig(num_samples=10_000, seed=3))
    assert samples.shape == (10_000,)
    means = ((samples[:, None] >> np.arange(4)) & 1).mean(axis=0)
    assert np.all((means >= 0.47) & (means <= 0.53))


def test_gibbs_deterministic():
    m = random_model(8, 4, 2)
    cfg = hbm.GibbsConfig(num_samples=500, burn_in=10, seed=42)
    assert np.array_equal(hbm.gibbs_sample(m, cfg), hbm.gibbs_sample(m, cfg))
    other = hbm.gibbs_sample(m, hbm.GibbsConfig(num_samples=500, burn_in=10, seed=43))
    assert not np.array_equal(hbm.gibbs_sample(m, cfg), other)


def test_gibbs_eta_within_4_sigma():
    m = random_model(9, 4, 4)
    z = verify.eta_z_scores(m, hbm.GibbsConfig(num_samples=50_000, seed=1))
    assert np.all(np.abs(z) <= 4.0)


def test_estimate_eta_examples():
    n = 3
    e = hbm.estimate_eta(np.full(10, 7), n).eta
    assert np.all(e == 1.0)
    e = hbm.estimate_eta(np.zeros(10, dtype=int), n).eta
    assert e[0] == 1.0 and np.all(e[1:] == 0.0)
    e = hbm.estimate_eta([0, 1, 2, 3], 2).eta
    assert e[0b01] == 0.5 and e[0b10] == 0.5 and e[0b11] == 0.25


def test_estimate_eta_errors():
    with pytest.raises(UsageError):
        hbm.estimate_eta([], 2)
    with pytest.raises(UsageError):
        hbm.estimate_eta([0, 4], 2)


# -- AIS -------------------------------------------------------------------------------


def test_ais_uniform_target_is_exact():
    res = hbm.ais_log_z(hbm.HbmModel.uniform(5, 3), hbm.AisConfig(num_intermediate=50, num_runs=20))
    assert np.all(res.log_weights == 0.0)
    assert res.log_z_estimate == 5 * math.log(2)
    assert res.log_z0 == 5 * math.log(2)


def test_ais_result_invariant():
    res = hbm.ais_log_z(random_model(1, 4, 4), hbm.AisConfig(num_intermediate=100, num_runs=30, seed=2))
    w = res.log_weights
    lme = w.max() + math.log(np.mean(np.exp(w - w.max())))
    assert res.log_z_estimate == pytest.approx(res.log_z0 + lme, abs=1e-12)


def test_ais_matches_exact_log_z():
    for seed in range(3):
        m = random_model(20 + seed, 4, 4)
        res = hbm.ais_log_z(m, hbm.AisConfig(num_intermediate=1000, num_runs=100, seed=seed))
        assert abs(res.log_z_estimate - hbm.exact_log_z(m)) <= 0.05


def test_ais_unbiased_ratio():
    m = random_model(30, 3, 3, scale=1.5)
    res = hbm.ais_log_z(m, hbm.AisConfig(num_intermediate=20, num_runs=1000, seed=5))
    w = np.exp(res.log_weights)
    ratio = math.exp(hbm.exact_log_z(m) - res.log_z0)
    assert abs(w.mean() - ratio) < 4 * w.std(ddof=1) / math.sqrt(w.size)


def test_ais_variance_shrinks_with_effort():
    m = random_model(31, 4, 4)

    def r_hat(K, M, seed):
        res = hbm.ais_log_z(m, hbm.AisConfig(num_intermediate=K, num_runs=M, seed=seed))
        return math.exp(res.log_z_estimate - res.log_z0)

    small = np.var([r_hat(100, 25, 1000 + i) for i in range(30)], ddof=1)
    large = np.var([r_hat(200, 50, 2000 + i) for i in range(30)], ddof=1)
    assert 2.0 <= small / large <= 8.0


def test_ais_schedule_validation():
    with pytest.raises(UsageError):
        hbm.AisConfig(num_intermediate=2, schedule=(0.0, 0.7, 0.5))
    with pytest.raises(UsageError):
        hbm.AisConfig(num_intermediate=2, schedule=(0.1, 0.5, 1.0))
    cfg = hbm.AisConfig(num_intermediate=2, schedule=(0.0, 0.25, 1.0))
    np.testing.assert_array_equal(cfg.betas, [0.0, 0.25, 1.0])


# -- fitting -------------------------------------------------------------------------------


def test_fit_saturated_matches_data():
    p_hat = random_dist(40, 3)
    fit = hbm.FitConfig(max_iterations=200_000, eta_tolerance=1e-7)
    res = hbm.fit_mle(distribution.eta_from_p(p_hat), hbm.HbmModel.uniform(3, 3), fit)
    assert res.converged
    assert distribution.kl_divergence(p_hat, res.model.distribution()) < 1e-8
    assert res.model.theta_bottom == pytest.approx(-hbm.exact_log_z(res.model), abs=1e-12)


def test_fit_first_order_recovers_product():
    rng = np.random.default_rng(41)
    marg = rng.uniform(0.2, 0.8, size=4)
    bits = (np.arange(16)[:, None] >> np.arange(4)) & 1
    p = distribution.DenseDistribution(np.prod(np.where(bits == 1, marg, 1 - marg), axis=1))
    res = hbm.fit_mle(distribution.eta_from_p(p), hbm.HbmModel.uniform(4, 1), hbm.FitConfig(eta_tolerance=1e-10))
    assert distribution.kl_divergence(p, res.model.distribution()) < 1e-8
    np.testing.assert_allclose(res.model.theta_b, np.log(marg / (1 - marg)), atol=1e-8)


def test_fit_moment_matching_n4_k2():
    p_star = random_dist(42, 4)
    target = distribution.eta_from_p(p_star)
    res = hbm.fit_mle(target, hbm.HbmModel.uniform(4, 2), hbm.FitConfig(learning_rate=0.1, eta_tolerance=1e-6))
    assert res.converged
    fitted = hbm.exact_eta(res.model).eta
    masks = lattice.index_masks(4, 2)
    assert np.abs(fitted[masks] - target.eta[masks]).max() < 1e-6
    assert np.all(res.model.theta_full()[lattice.popcounts(4) > 2] == 0)
    # the fitted model is in S(B): its own theta coordinates vanish off B
    assert decomposition.off_model_theta(res.model.distribution(), 2) < 1e-9


def test_fit_accepts_restricted_target():
    p_star = random_dist(43, 3)
    masks = lattice.index_masks(3, 2)
    full = hbm.fit_mle(distribution.eta_from_p(p_star), hbm.HbmModel.uniform(3, 2))
    part = hbm.fit_mle(distribution.eta_from_p(p_star).eta[masks], hbm.HbmModel.uniform(3, 2))
    np.testing.assert_array_equal(full.model.theta_b, part.model.theta_b)


def test_fit_trace_likelihood_increases():
    p_hat = random_dist(44, 4)
    res = hbm.fit_mle(distribution.eta_from_p(p_hat), hbm.HbmModel.uniform(4, 3), hbm.FitConfig(max_iterations=2000))
    ll = res.trace["mean_log_likelihood"]
    assert len(ll) == res.iterations + 1
    assert np.all(np.diff(ll) >= -1e-12)
    assert res.trace["grad_norm"][-1] == res.grad_norm


def test_fit_divergence_raises_with_diagnostics():
    # eta gaps are bounded by 1, so blow-up needs a start near the optimum and a huge step
    target = distribution.eta_from_p(random_dist(45, 3))
    near = hbm.fit_mle(target, hbm.HbmModel.uniform(3, 3), hbm.FitConfig(eta_tolerance=1e-4)).model
    with pytest.raises(NonConvergenceError) as info:
        hbm.fit_mle(target, near, hbm.FitConfig(learning_rate=500.0))
    d = info.value.diagnostics
    assert d["iterations"] >= 1
    assert len(d["grad_norms"]) == d["iterations"] + 1


def test_fit_sampled_mode():
    p_hat = random_dist(46, 3)
    fit = hbm.FitConfig(max_iterations=60, mode="sampled", report_every=20, eta_tolerance=1e-9)
    gibbs = hbm.GibbsConfig(num_samples=2000, burn_in=50, seed=3)
    ais = hbm.AisConfig(num_intermediate=200, num_runs=50, seed=4)
    res = hbm.fit_mle(distribution.eta_from_p(p_hat), hbm.HbmModel.uniform(3, 2), fit, gibbs, ais)
    reported = ~np.isnan(res.trace["log_z"])
    assert list(np.flatnonzero(reported)) == [0, 20, 40, 60]
    assert abs(-res.model.theta_bottom - hbm.exact_log_z(res.model)) < 0.05
    again = hbm.fit_mle(distribution.eta_from_p(p_hat), hbm.HbmModel.uniform(3, 2), fit, gibbs, ais)
    np.testing.assert_array_equal(res.model.theta_b, again.model.theta_b)
    exact_res = hbm.fit_mle(distribution.eta_from_p(p_hat), hbm.HbmModel.uniform(3, 2), hbm.FitConfig(max_iterations=60))
    assert np.abs(res.model.theta_b - exact_res.model.theta_b).max() < 0.1


def test_gradient_matches_finite_differences():
    for seed in range(3):
        for n, k in ((3, 2), (4, 2), (5, 3)):
            m = random_model(50 + seed, n, k)
            assert verify.gradient_error(m, random_dist(60 + seed, n)) < 1e-4


# -- likelihood --------------------------------------------------------------------------


def test_log_likelihood_uniform():
    d = distribution.EmpiricalDataset(np.array([3, 0, 2, 5, 1, 0, 0, 9]))
    m = hbm.HbmModel.uniform(3, 2)
    assert hbm.log_likelihood(m, d, hbm.exact_log_z(m)) == pytest.approx(-d.total * 3 * math.log(2))


def test_log_likelihood_saturated_is_negative_entropy():
    counts = np.array([4, 7, 1, 3, 9, 2, 5, 6])
    d = distribution.EmpiricalDataset(counts)
    p_hat = distribution.empirical_distribution(d)
    proj = decomposition.project_true_hbm(p_hat, 3, 3)
    entropy = -float(np.sum(p_hat.probs * np.log(p_hat.probs)))
    ll = hbm.log_likelihood(proj.model, d, -proj.model.theta_bottom)
    assert ll == pytest.approx(-d.total * entropy, abs=1e-9)


def test_log_likelihood_nested_models():
    rng = np.random.default_rng(70)
    p_star = random_dist(71, 4)
    d = distribution.EmpiricalDataset(rng.multinomial(3000, p_star.probs))
    p_hat = distribution.empirical_distribution(d)
    assert p_hat.strictly_positive
    lls = []
    for k in range(1, 5):
        model = decomposition.project_true_hbm(p_hat, 4, k).model
        lls.append(hbm.log_likelihood(model, d, hbm.exact_log_z(model)))
    assert np.all(np.diff(lls) >= -1e-9)


# -- persistence ----------------------------------------------------------------------------


def test_model_roundtrip(tmp_path):
    m = random_model(80, 4, 3)
    path = tmp_path / "m.hbm"
    hbm.save_model(path, m, {"seed": 5})
    back, prov = hbm.load_model(path)
    assert (back.n, back.k, back.normalized) == (4, 3, True)
    assert np.array_equal(back.theta_b, m.theta_b)
    assert back.theta_bottom == m.theta_bottom
    assert prov == {"seed": 5}
