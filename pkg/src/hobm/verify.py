"""Self-check suite run by ``hobm verify``.

Each check compares a fast code path against an independent route (naive
recursion, finite differences, exact enumeration) and reports the measured
discrepancy against its threshold.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import decomposition, distribution, hbm, lattice, rbm
from .seeding import make_rng, replicate_seed


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    threshold: float
    detail: str = ""
    seconds: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)


def _random_dist(rng, n) -> distribution.DenseDistribution:
    u = rng.random(1 << n) + 1e-3
    return distribution.DenseDistribution(u / u.sum())


def _random_model(rng, n, k, scale=1.0) -> hbm.HbmModel:
    size = lattice.index_set_size(n, k)
    return hbm.HbmModel(n, k, rng.uniform(-scale, scale, size), 0.0).normalize()


def check_mobius_closed_form(rng, n=4):
    bad = 0
    for s, x in itertools.product(range(1 << n), repeat=2):
        a, b = lattice.Outcome(s, n), lattice.Outcome(x, n)
        bad += lattice.mobius(a, b) != lattice.mobius_recursive(a, b)
    return bad, 0, f"n={n}, {4**n} pairs"


def check_transform_roundtrip(rng, n=8):
    v = rng.normal(size=1 << n)
    err = max(
        np.abs(lattice.fast_zeta_transform(lattice.fast_mobius_transform(v, d), d) - v).max()
        for d in ("down", "up")
    )
    return err, 1e-10, f"n={n}"


def check_theta_roundtrip(rng, n=6, trials=20):
    err = 0.0
    for _ in range(trials):
        p = _random_dist(rng, n)
        q = distribution.p_from_theta(distribution.theta_from_p(p))
        err = max(err, np.abs(p.probs - q.probs).max())
    return err, 1e-9, f"n={n}, {trials} distributions"


def check_eta_roundtrip(rng, n=6, trials=20):
    err = 0.0
    for _ in range(trials):
        p = _random_dist(rng, n)
        q = distribution.p_from_eta(distribution.eta_from_p(p))
        err = max(err, np.abs(p.probs - q.probs).max())
    return err, 1e-9, f"n={n}, {trials} distributions"


def mean_log_likelihood(model: hbm.HbmModel, p_hat: distribution.DenseDistribution) -> float:
    """``sum_x p_hat(x) log p_B(x)`` with exact normalization."""
    return float(p_hat.probs @ model.log_potentials) - hbm.exact_log_z(model)


def gradient_error(model: hbm.HbmModel, p_hat: distribution.DenseDistribution, step=1e-5) -> float:
    """Max gap between central differences of the mean log-likelihood and ``eta_hat - eta_B``."""
    analytic = (distribution.eta_from_p(p_hat).eta - hbm.exact_eta(model).eta)[model.masks]
    worst = 0.0
    for j in range(model.param_count):
        hi, lo = model.theta_b.copy(), model.theta_b.copy()
        hi[j] += step
        lo[j] -= step
        fd = (
            mean_log_likelihood(model.with_params(theta_b=hi), p_hat)
            - mean_log_likelihood(model.with_params(theta_b=lo), p_hat)
        ) / (2 * step)
        worst = max(worst, abs(fd - analytic[j]))
    return worst


def check_gradient(rng, n=4, k=2):
    model = _random_model(rng, n, k)
    return gradient_error(model, _random_dist(rng, n)), 1e-4, f"n={n}, k={k}"


def check_gibbs_stationarity(rng, n=3):
    model = _random_model(rng, n, n)
    p = model.distribution().probs
    err = np.abs(p @ hbm.gibbs_kernel(model) - p).max()
    return err, 1e-12, f"n={n}, full sweep kernel"


def eta_z_scores(model: hbm.HbmModel, cfg: hbm.GibbsConfig) -> np.ndarray:
    """``(eta_hat - eta) / binomial sigma`` on every non-empty outcome."""
    exact = hbm.exact_eta(model).eta[1:]
    est = hbm.estimate_eta(hbm.gibbs_sample(model, cfg), model.n).eta[1:]
    sigma = np.sqrt(exact * (1 - exact) / cfg.num_samples)
    return (est - exact) / sigma


def check_gibbs_eta(rng, n=4, seeds=3):
    z = np.concatenate([
        eta_z_scores(_random_model(rng, n, n), hbm.GibbsConfig(num_samples=10_000, seed=s))
        for s in range(seeds)
    ])
    frac = float(np.mean(np.abs(z) <= 4.0))
    return 1.0 - frac, 0.05, f"fraction of {z.size} coordinates outside 4 sigma (M=10000)"


def check_ais(rng, n=4):
    model = _random_model(rng, n, n)
    est = hbm.ais_log_z(model, hbm.AisConfig(num_intermediate=1000, num_runs=100, seed=int(rng.integers(2**32))))
    return abs(est.log_z_estimate - hbm.exact_log_z(model)), 0.05, f"|delta log Z| nats, n={n}, K=1000, M=100"


def check_saturated_fit(rng, n=4):
    p_hat = _random_dist(rng, n)
    fit = hbm.FitConfig(max_iterations=300_000, eta_tolerance=1e-6)
    result = hbm.fit_mle(distribution.eta_from_p(p_hat), hbm.HbmModel.uniform(n, n), fit)
    kl = distribution.kl_divergence(p_hat, result.model.distribution())
    return kl, 1e-8, f"KL(P_hat, fit), n=k={n}, {result.iterations} iterations"


def check_pythagoras(rng, n=3, k=2):
    p_star = _random_dist(rng, n)
    proj = decomposition.project_true_hbm(p_star, n, k)
    counts = rng.multinomial(200, p_star.probs) + 1
    p_hat = distribution.DenseDistribution(counts / counts.sum())
    fitted = hbm.fit_mle(distribution.eta_from_p(p_hat), hbm.HbmModel.uniform(n, k)).model.distribution()
    res = decomposition.pythagoras_check(p_star, proj.projected, fitted, k)
    return abs(res), 1e-6, f"n={n}, k={k}"


def check_rbm_factorization(rng, n=2, m=2):
    model = rbm.RbmModel(rng.normal(size=n), rng.normal(size=m), rng.normal(size=(n, m)))
    joint = np.exp(rbm._joint_log_potentials(model))
    hs = rbm.visible_states(m)
    worst = 0.0
    for v in range(1 << n):
        cond = joint[v] / joint[v].sum()
        q = rbm.hidden_conditional(model, rbm.visible_states(n)[v])
        prod = np.prod(np.where(hs == 1, q, 1 - q), axis=1)
        worst = max(worst, np.abs(cond - prod).max())
    return worst, 1e-12, f"n={n}, m={m}"


CHECKS = {
    "mobius_closed_form": check_mobius_closed_form,
    "transform_roundtrip": check_transform_roundtrip,
    "theta_roundtrip": check_theta_roundtrip,
    "eta_roundtrip": check_eta_roundtrip,
    "gradient_identity": check_gradient,
    "gibbs_stationarity": check_gibbs_stationarity,
    "gibbs_eta_4sigma": check_gibbs_eta,
    "ais_log_z": check_ais,
    "saturated_fit": check_saturated_fit,
    "pythagoras_residual": check_pythagoras,
    "rbm_factorization": check_rbm_factorization,
}


def run_checks(seed: int = 0, names=None) -> list[CheckResult]:
    results = []
    for name, check in CHECKS.items():
        if names and name not in names:
            continue
        rng = make_rng(replicate_seed(seed, "verify", list(CHECKS).index(name)))
        start = time.perf_counter()
        try:
            measured, threshold, detail = check(rng)
            measured = float(measured)
            passed = math.isfinite(measured) and measured <= threshold
        except Exception as exc:  # a crashing check is a failed check
            measured, threshold, detail, passed = float("nan"), float("nan"), f"{type(exc).__name__}: {exc}", False
        results.append(CheckResult(name, passed, measured, threshold, detail, time.perf_counter() - start))
    return results
