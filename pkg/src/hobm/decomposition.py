"""Bias-variance decomposition of KL error for HBM and RBM model families.

For a model family ``S(B)``, true distribution ``P*``, its projection
``P*_B`` and a data-fitted model ``P^_B``::

    E[KL(P*, P^_B)] = KL(P*, P*_B) + E[KL(P*_B, P^_B)]
         total            bias           variance

The identity is exact for HBMs (``S(B)`` is e-flat and ``P*_B`` its
m-projection). For RBMs it only holds approximately and the residual is
reported as measured.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from . import hbm, lattice, rbm
from .distribution import (
    DenseDistribution,
    empirical_distribution,
    eta_from_p,
    kl_divergence,
    theta_from_p,
)
from .errors import HobmError, PreconditionError, UsageError
from .seeding import replicate_seed
from .synthdata import dataset_seed, draw_dataset

# projections anchor every row, so they are fitted much tighter than replicates
PROJECTION_FIT = hbm.FitConfig(learning_rate=0.1, max_iterations=500_000, eta_tolerance=1e-10)
SUBMANIFOLD_TOL = 1e-6
NEWTON_TOL = 1e-13

CSV_COLUMNS = (
    "family",
    "n",
    "complexity",
    "param_count",
    "mode",
    "sample_size",
    "replicates_ok",
    "bias_nats",
    "variance_nats",
    "variance_stderr",
    "total_nats",
    "pythagoras_residual",
    "base_seed",
    "wall_time_s",
    "status",
)


@dataclass(frozen=True, eq=False)
class ProjectionResult:
    """``P*_B`` together with how closely it matches ``P*``'s moments.

    ``achieved_eta_gap`` is ``max |eta* - eta_B|`` over ``B`` for exact HBM
    projections and over all outcomes for large-sample RBM proxies.
    """

    projected: DenseDistribution
    achieved_eta_gap: float
    method: str
    model: object = None
    iterations: int = 0


@dataclass
class DecompositionReport:
    family: str
    n: int
    complexity: int
    param_count: int
    mode: str
    sample_size: int
    replicate_count: int
    replicates_ok: int
    seeds: list[int]
    bias: float
    variance: float
    variance_stderr: float
    total: float
    pythagoras_residual: float
    base_seed: int
    wall_time_s: float = 0.0
    status: str = "ok"
    failures: list[str] = field(default_factory=list)
    projection_gap: float = float("nan")
    proxy_noise_nats: float | None = None

    def csv_values(self) -> list:
        return [
            self.family,
            self.n,
            self.complexity,
            self.param_count,
            self.mode,
            self.sample_size,
            self.replicates_ok,
            self.bias,
            self.variance,
            self.variance_stderr,
            self.total,
            self.pythagoras_residual,
            self.base_seed,
            self.wall_time_s,
            self.status,
        ]


class VarianceEstimate(NamedTuple):
    mean: float
    stderr: float
    used: int
    excluded: list[int]


def _newton_projection(eta_target: np.ndarray, n: int, k: int, tol: float, max_iterations: int = 200):
    """Damped Newton ascent of ``eta_target . theta - log Z(theta)`` on the dense feature matrix.

    Returns ``(theta_b, log_z, grad_norm, iterations)`` or ``None`` when the
    feature matrix would be too large or the iteration stalls.
    """
    masks = lattice.index_masks(n, k)
    if (1 << n) * masks.size > hbm._FEATURE_MATRIX_LIMIT:
        return None
    features = lattice.feature_matrix(n, k).astype(float)
    eta_hat = eta_target[masks]

    def evaluate(theta):
        lp = features @ theta
        top = lp.max()
        w = np.exp(lp - top)
        log_z = top + math.log(w.sum())
        p = w / w.sum()
        return float(eta_hat @ theta) - log_z, log_z, p

    theta = np.zeros(masks.size)
    objective, log_z, p = evaluate(theta)
    for it in range(max_iterations + 1):
        eta_b = features.T @ p
        grad = eta_hat - eta_b
        g = float(np.abs(grad).max())
        if g < tol:
            return theta, log_z, g, it
        if it == max_iterations:
            return None
        # Fisher information: covariance of the sufficient statistics
        info = (features * p[:, None]).T @ features - np.outer(eta_b, eta_b)
        step = np.linalg.lstsq(info, grad, rcond=None)[0]
        scale = 1.0
        while scale > 1e-10:
            trial = theta + scale * step
            t_obj, t_log_z, t_p = evaluate(trial)
            if t_obj >= objective - 1e-15:
                break
            scale *= 0.5
        else:
            return None
        theta, objective, log_z, p = trial, t_obj, t_log_z, t_p
    return None


def project_true_hbm(
    p_star: DenseDistribution, n: int, k: int, fit: hbm.FitConfig = PROJECTION_FIT
) -> ProjectionResult:
    """Exact MLE of the order-``k`` HBM with ``P*`` itself as the data.

    Uses Newton's method on exact moments when the dense feature matrix fits
    in memory and falls back to gradient ascent with ``fit`` otherwise.
    """
    if p_star.n != n:
        raise UsageError(f"p_star lives on n={p_star.n}, not n={n}")
    if not p_star.strictly_positive:
        raise PreconditionError("projection needs a strictly positive P*")
    target = eta_from_p(p_star)
    newton = _newton_projection(target.eta, n, k, NEWTON_TOL)
    if newton is not None:
        theta_b, log_z, gap, iterations = newton
        model = hbm.HbmModel(n, k, theta_b, -log_z, normalized=True)
        return ProjectionResult(model.distribution(), gap, "exact-newton", model, iterations)
    fit = replace(fit, mode="exact")
    result = hbm.fit_mle(target, hbm.HbmModel.uniform(n, k), fit)
    return ProjectionResult(
        result.model.distribution(), float(result.grad_norm), "exact", result.model, result.iterations
    )


def bias(p_star: DenseDistribution, proj: ProjectionResult) -> float:
    return kl_divergence(p_star, proj.projected)


def variance_estimate(p_star_b: DenseDistribution, fitted: Sequence[DenseDistribution]) -> VarianceEstimate:
    """Replicate mean of ``KL(P*_B, P^_B)`` and its standard error.

    Replicates where the KL is undefined are excluded and listed by index.
    """
    if len(fitted) < 2:
        raise UsageError("variance needs at least two fitted replicates")
    values, excluded = [], []
    for r, q in enumerate(fitted):
        try:
            values.append(kl_divergence(p_star_b, q))
        except HobmError:
            excluded.append(r)
    return VarianceEstimate(*_mean_stderr(values), len(values), excluded)


def _mean_stderr(values) -> tuple[float, float]:
    if not values:
        return float("nan"), float("nan")
    arr = np.asarray(values, dtype=float)
    if arr.size < 2:
        return float(arr.mean()), float("nan")
    return float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(arr.size))


def off_model_theta(p: DenseDistribution, k: int) -> float:
    """Largest ``|theta(x)|`` over outcomes with ``|x| > k``."""
    theta = theta_from_p(p).theta
    off = lattice.popcounts(p.n) > k
    return float(np.abs(theta[off]).max()) if off.any() else 0.0


def pythagoras_check(
    p_star: DenseDistribution,
    p_star_b: DenseDistribution,
    p_hat_b: DenseDistribution,
    k: int,
) -> float:
    """``KL(P*, P^_B) - KL(P*, P*_B) - KL(P*_B, P^_B)``.

    Both model distributions must lie in the order-``k`` family (``theta`` zero
    above order ``k`` to within 1e-6); otherwise :class:`PreconditionError`.
    """
    for name, q in (("P*_B", p_star_b), ("P^_B", p_hat_b)):
        if not q.strictly_positive:
            raise PreconditionError(f"{name} must be strictly positive")
        gap = off_model_theta(q, k)
        if gap > SUBMANIFOLD_TOL:
            raise PreconditionError(f"{name} is not in the order-{k} family (|theta| = {gap:.3g})")
    return (
        kl_divergence(p_star, p_hat_b)
        - kl_divergence(p_star, p_star_b)
        - kl_divergence(p_star_b, p_hat_b)
    )


# -- replicate workers (top level so a process pool can pickle them) --------


class _ReplicateOutcome(NamedTuple):
    sample_size: int
    replicate: int
    seed: int
    total: float
    variance: float
    failure: str | None
    elapsed: float


def _hbm_replicate(args) -> _ReplicateOutcome:
    p_star, p_star_b, k, sample_size, r, base_seed, fit, gibbs, ais = args
    start = time.perf_counter()
    seed = dataset_seed(base_seed, sample_size, r)
    try:
        data = draw_dataset(p_star, sample_size, seed)
        tag = f"{k}:{sample_size}"
        result = hbm.fit_mle(
            eta_from_p(empirical_distribution(data)),
            hbm.HbmModel.uniform(p_star.n, k),
            fit,
            replace(gibbs, seed=replicate_seed(base_seed, f"gibbs:{tag}", r)),
            replace(ais, seed=replicate_seed(base_seed, f"ais:{tag}", r)),
        )
        q = result.model.distribution()
        total, var = kl_divergence(p_star, q), kl_divergence(p_star_b, q)
        failure = None
    except HobmError as exc:
        total = var = float("nan")
        failure = f"N={sample_size} r={r}: {type(exc).__name__}: {exc}"
    return _ReplicateOutcome(sample_size, r, seed, total, var, failure, time.perf_counter() - start)


def _rbm_replicate(args) -> _ReplicateOutcome:
    p_star, p_star_b, hidden, sample_size, r, base_seed, cd = args
    start = time.perf_counter()
    seed = dataset_seed(base_seed, sample_size, r)
    try:
        data = draw_dataset(p_star, sample_size, seed)
        tag = f"{hidden}:{sample_size}"
        m0 = rbm.RbmModel.initialize(p_star.n, hidden, replicate_seed(base_seed, f"rbm-init:{tag}", r))
        cfg = replace(cd, seed=replicate_seed(base_seed, f"cd:{tag}", r))
        q = rbm.exact_visible_marginal(rbm.train_cd(m0, data, cfg, trace_every=0).model)
        total, var = kl_divergence(p_star, q), kl_divergence(p_star_b, q)
        failure = None
    except HobmError as exc:
        total = var = float("nan")
        failure = f"N={sample_size} r={r}: {type(exc).__name__}: {exc}"
    return _ReplicateOutcome(sample_size, r, seed, total, var, failure, time.perf_counter() - start)


def _run(worker, tasks: list, workers: int) -> list:
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(worker, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    return [worker(t) for t in tasks]


def _aggregate(outcomes, bias_value, sample_sizes, replicates, make_report) -> list[DecompositionReport]:
    by_size: dict[int, list[_ReplicateOutcome]] = {N: [] for N in sample_sizes}
    for o in outcomes:
        by_size[o.sample_size].append(o)
    reports = []
    for N in sample_sizes:
        rows = sorted(by_size[N], key=lambda o: o.replicate)
        ok = [o for o in rows if o.failure is None]
        variance, stderr = _mean_stderr([o.variance for o in ok])
        total, _ = _mean_stderr([o.total for o in ok])
        if len(ok) == replicates:
            status = "ok"
        elif ok:
            status = "partial"
        else:
            status = "failed"
        reports.append(
            make_report(
                sample_size=N,
                replicate_count=replicates,
                replicates_ok=len(ok),
                seeds=[o.seed for o in rows],
                bias=bias_value,
                variance=variance,
                variance_stderr=stderr,
                total=total,
                pythagoras_residual=total - bias_value - variance,
                wall_time_s=float(sum(o.elapsed for o in rows)),
                status=status,
                failures=[o.failure for o in rows if o.failure],
            )
        )
    return reports


def decompose_hbm(
    p_star: DenseDistribution,
    k: int,
    sample_sizes: Sequence[int],
    replicates: int = 24,
    base_seed: int = 0,
    fit: hbm.FitConfig = hbm.FitConfig(),
    gibbs: hbm.GibbsConfig = hbm.GibbsConfig(),
    ais: hbm.AisConfig = hbm.AisConfig(),
    projection_fit: hbm.FitConfig = PROJECTION_FIT,
    workers: int = 1,
    projection: ProjectionResult | None = None,
) -> list[DecompositionReport]:
    """One report per sample size for the order-``k`` HBM.

    ``P*_B`` is computed once (exact mode); every replicate dataset is fitted
    in ``fit.mode`` and evaluated against exactly normalized distributions.
    """
    n = p_star.n
    if replicates < 2:
        raise UsageError("need at least two replicates")
    proj = projection or project_true_hbm(p_star, n, k, projection_fit)
    bias_value = bias(p_star, proj)
    tasks = [
        (p_star, proj.projected, k, N, r, base_seed, fit, gibbs, ais)
        for N in sample_sizes
        for r in range(replicates)
    ]
    outcomes = _run(_hbm_replicate, tasks, workers)

    def make_report(**kw):
        return DecompositionReport(
            family="hbm",
            n=n,
            complexity=k,
            param_count=lattice.index_set_size(n, k),
            mode=fit.mode,
            base_seed=base_seed,
            projection_gap=proj.achieved_eta_gap,
            **kw,
        )

    return _aggregate(outcomes, bias_value, list(sample_sizes), replicates, make_report)


def project_true_rbm(
    p_star: DenseDistribution,
    hidden: int,
    mle_sample_size: int,
    cd: rbm.CdConfig,
    base_seed: int,
    index: int = 0,
) -> ProjectionResult:
    """Large-sample stand-in for the RBM's MLE of ``P*``."""
    data = draw_dataset(p_star, mle_sample_size, replicate_seed(base_seed, "mle-dataset", index))
    m0 = rbm.RbmModel.initialize(p_star.n, hidden, replicate_seed(base_seed, f"rbm-mle-init:{hidden}", index))
    cfg = replace(cd, seed=replicate_seed(base_seed, f"rbm-mle:{hidden}", index))
    model = rbm.train_cd(m0, data, cfg, trace_every=0).model
    q = rbm.exact_visible_marginal(model)
    gap = float(np.abs(eta_from_p(p_star).eta - eta_from_p(q).eta).max())
    return ProjectionResult(q, gap, "large-sample", model)


def decompose_rbm(
    p_star: DenseDistribution,
    hidden: int,
    sample_sizes: Sequence[int],
    replicates: int = 24,
    base_seed: int = 0,
    cd: rbm.CdConfig = rbm.CdConfig(),
    mle_sample_size: int = 1_000_000,
    workers: int = 1,
) -> list[DecompositionReport]:
    """One report per sample size for an RBM with ``hidden`` hidden units.

    ``P*_B`` is the exact visible marginal of an RBM trained on
    ``mle_sample_size`` draws from ``P*``. A second independent large-sample
    fit gives ``proxy_noise_nats``, the KL between the two proxies.
    """
    n = p_star.n
    if replicates < 2:
        raise UsageError("need at least two replicates")
    proj = project_true_rbm(p_star, hidden, mle_sample_size, cd, base_seed, 0)
    twin = project_true_rbm(p_star, hidden, mle_sample_size, cd, base_seed, 1)
    noise = kl_divergence(proj.projected, twin.projected)
    bias_value = bias(p_star, proj)
    tasks = [
        (p_star, proj.projected, hidden, N, r, base_seed, cd)
        for N in sample_sizes
        for r in range(replicates)
    ]
    outcomes = _run(_rbm_replicate, tasks, workers)
    params = (n + hidden) + n * hidden

    def make_report(**kw):
        return DecompositionReport(
            family="rbm",
            n=n,
            complexity=hidden,
            param_count=params,
            mode="cd",
            base_seed=base_seed,
            projection_gap=proj.achieved_eta_gap,
            proxy_noise_nats=noise,
            **kw,
        )

    return _aggregate(outcomes, bias_value, list(sample_sizes), replicates, make_report)
