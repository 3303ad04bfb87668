"""Higher-order Boltzmann machine in log-linear form.

The model of order ``k`` keeps one natural parameter ``theta(x)`` for every
non-empty outcome with ``|x| <= k``; all other ``theta(x)`` are pinned at zero
and ``theta(bottom) = -log Z`` carries the normalization::

    log p(x) = sum_{s in B, s <= x} theta(s) + theta(bottom)

Singleton parameters are the biases, pairs the usual weights, and larger
subsets the higher-order interactions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy.special import expit

from . import lattice
from .distribution import DenseDistribution, EmpiricalDataset, EtaCoordinates
from .errors import NonConvergenceError, UsageError
from .seeding import make_rng, replicate_seed
from .textio import fmt_float, read_text_file, state_string, write_text_file

LOG2 = math.log(2.0)

# dense feature matrices are used for the exact fit below this many entries
_FEATURE_MATRIX_LIMIT = 1 << 22


@dataclass(frozen=True, eq=False)
class HbmModel:
    n: int
    k: int
    theta_b: np.ndarray
    theta_bottom: float
    normalized: bool = False

    def __post_init__(self):
        masks = lattice.index_masks(self.n, self.k)
        theta = np.array(self.theta_b, dtype=float, copy=True)
        if theta.shape != masks.shape:
            raise UsageError(f"expected {masks.size} parameters for n={self.n}, k={self.k}")
        if not np.all(np.isfinite(theta)):
            raise UsageError("model parameters must be finite")
        theta.setflags(write=False)
        object.__setattr__(self, "theta_b", theta)
        object.__setattr__(self, "theta_bottom", float(self.theta_bottom))

    @classmethod
    def uniform(cls, n: int, k: int) -> "HbmModel":
        size = lattice.index_masks(n, k).size
        return cls(n, k, np.zeros(size), -n * LOG2, normalized=True)

    @property
    def masks(self) -> np.ndarray:
        return lattice.index_masks(self.n, self.k)

    @property
    def index_set(self) -> list[lattice.Outcome]:
        return lattice.model_index_set(self.n, self.k)

    @property
    def param_count(self) -> int:
        return int(self.masks.size)

    def theta_full(self) -> np.ndarray:
        """Dense theta over all ``2**n`` outcomes, ``theta(bottom)`` included."""
        full = np.zeros(1 << self.n)
        full[self.masks] = self.theta_b
        full[0] = self.theta_bottom
        return full

    @cached_property
    def log_potentials(self) -> np.ndarray:
        """Unnormalized log-probability of every outcome (bottom term excluded)."""
        full = np.zeros(1 << self.n)
        full[self.masks] = self.theta_b
        out = lattice.fast_zeta_transform(full, "down")
        out.setflags(write=False)
        return out

    def with_params(self, theta_b=None, theta_bottom=None, normalized=None) -> "HbmModel":
        return replace(
            self,
            theta_b=self.theta_b if theta_b is None else theta_b,
            theta_bottom=self.theta_bottom if theta_bottom is None else theta_bottom,
            normalized=self.normalized if normalized is None else normalized,
        )

    def normalize(self) -> "HbmModel":
        return self.with_params(theta_bottom=-exact_log_z(self), normalized=True)

    def distribution(self) -> DenseDistribution:
        """The exactly normalized distribution of the model."""
        lp = self.log_potentials
        w = np.exp(lp - lp.max())
        return DenseDistribution(w / w.sum())


@dataclass(frozen=True)
class GibbsConfig:
    num_samples: int = 10_000
    burn_in: int = 1_000
    seed: int = 0
    temperature: float = 1.0

    def __post_init__(self):
        if self.num_samples < 1 or self.burn_in < 0:
            raise UsageError("need num_samples >= 1 and burn_in >= 0")
        if self.temperature != 1.0:
            raise UsageError("the Boltzmann constant is fixed at C = 1")


@dataclass(frozen=True)
class AisConfig:
    num_intermediate: int = 1_000
    num_runs: int = 100
    seed: int = 0
    schedule: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.num_intermediate < 1 or self.num_runs < 1:
            raise UsageError("need num_intermediate >= 1 and num_runs >= 1")
        if self.schedule is not None:
            b = np.asarray(self.schedule, dtype=float)
            if b.size != self.num_intermediate + 1:
                raise UsageError("schedule must have num_intermediate + 1 entries")
            if b[0] != 0.0 or b[-1] != 1.0 or np.any(np.diff(b) <= 0):
                raise UsageError("schedule must increase strictly from 0 to 1")
            object.__setattr__(self, "schedule", tuple(float(v) for v in b))

    @property
    def betas(self) -> np.ndarray:
        if self.schedule is not None:
            return np.asarray(self.schedule)
        return np.linspace(0.0, 1.0, self.num_intermediate + 1)


@dataclass(frozen=True, eq=False)
class AisResult:
    log_z_estimate: float
    log_weights: np.ndarray
    log_z0: float


@dataclass(frozen=True)
class FitConfig:
    learning_rate: float = 0.1
    max_iterations: int = 10_000
    eta_tolerance: float = 1e-6
    mode: str = "exact"
    report_every: int = 0  # sampled mode: AIS log Z every this many iterations (0: end only)

    def __post_init__(self):
        if self.learning_rate <= 0 or self.max_iterations < 1:
            raise UsageError("need learning_rate > 0 and max_iterations >= 1")
        if self.mode not in ("exact", "sampled"):
            raise UsageError(f"mode must be 'exact' or 'sampled', got {self.mode!r}")


@dataclass(eq=False)
class FitResult:
    model: HbmModel
    iterations: int
    grad_norm: float
    converged: bool
    trace: dict = field(repr=False)


def _bits(x) -> int:
    return int(getattr(x, "bits", x))


def unnormalized_log_prob(m: HbmModel, x) -> float:
    """``sum_{s in B, s <= x} theta(s)``."""
    if isinstance(x, lattice.Outcome) and x.n != m.n:
        raise UsageError(f"outcome on n={x.n}, model on n={m.n}")
    bits = _bits(x)
    masks = m.masks
    return float(m.theta_b[(masks & bits) == masks].sum())


def exact_log_z(m: HbmModel) -> float:
    lp = m.log_potentials
    top = lp.max()
    return float(top + np.log(np.exp(lp - top).sum()))


def exact_eta(m: HbmModel) -> EtaCoordinates:
    eta = lattice.fast_zeta_transform(m.distribution().probs, "up")
    eta[0] = 1.0
    return EtaCoordinates(eta)


def gibbs_conditional(m: HbmModel, x, i: int) -> float:
    """``P(x_i = 1 | x_{-i})`` for the 0-based variable ``i``."""
    if not 0 <= i < m.n:
        raise UsageError(f"variable index {i} out of range for n={m.n}")
    b = 1 << i
    bits = _bits(x)
    delta = unnormalized_log_prob(m, bits | b) - unnormalized_log_prob(m, bits & ~b)
    return float(expit(delta))


def _logistic(d: float) -> float:
    if d >= 0:
        return 1.0 / (1.0 + math.exp(-d))
    e = math.exp(d)
    return e / (1.0 + e)


def gibbs_sample(m: HbmModel, cfg: GibbsConfig) -> np.ndarray:
    """Systematic-scan Gibbs chain; returns ``num_samples`` outcome bitmasks.

    One sample is the state after a full sweep over variables ``0..n-1``; the
    first ``burn_in`` sweeps are discarded. The chain starts from a uniform
    random state.
    """
    n = m.n
    rng = make_rng(cfg.seed)
    lp = m.log_potentials.tolist()
    x = int(rng.integers(0, 1 << n))
    sweeps = cfg.burn_in + cfg.num_samples
    uniforms = rng.random((sweeps, n)).tolist()
    out = np.empty(cfg.num_samples, dtype=np.int64)
    bit = [1 << i for i in range(n)]
    for t in range(sweeps):
        u = uniforms[t]
        for i in range(n):
            on = x | bit[i]
            off = on ^ bit[i]
            x = on if u[i] < _logistic(lp[on] - lp[off]) else off
        if t >= cfg.burn_in:
            out[t - cfg.burn_in] = x
    return out


def gibbs_kernel(m: HbmModel) -> np.ndarray:
    """Exact transition matrix of one systematic sweep (small ``n`` only)."""
    size = 1 << m.n
    kernel = np.eye(size)
    for i in range(m.n):
        step = np.zeros((size, size))
        b = 1 << i
        for x in range(size):
            p1 = gibbs_conditional(m, x, i)
            step[x, x | b] += p1
            step[x, x & ~b] += 1.0 - p1
        kernel = kernel @ step
    return kernel


def estimate_eta(samples, n: int) -> EtaCoordinates:
    """``eta(x)`` as the fraction of samples that contain ``x``."""
    samples = np.asarray(samples, dtype=np.int64)
    if samples.size == 0:
        raise UsageError("cannot estimate eta from an empty sample")
    n = lattice.check_n(n)
    counts = np.bincount(samples, minlength=1 << n)
    if counts.size != 1 << n:
        raise UsageError(f"sample outside the n={n} lattice")
    eta = lattice.fast_zeta_transform(counts / samples.size, "up")
    eta[0] = 1.0
    return EtaCoordinates(eta)


def ais_log_z(m: HbmModel, cfg: AisConfig) -> AisResult:
    """Annealed importance sampling estimate of ``log Z`` on a geometric path.

    The base distribution is uniform (``log Z0 = n log 2``); the intermediate
    targets are ``f^beta`` for the model's unnormalized density ``f``. Runs are
    advanced together, one Gibbs sweep per temperature.
    """
    n, runs = m.n, cfg.num_runs
    rng = make_rng(cfg.seed)
    lp = m.log_potentials
    betas = cfg.betas
    x = rng.integers(0, 1 << n, size=runs)
    log_w = np.zeros(runs)
    for k in range(1, betas.size):
        log_w += (betas[k] - betas[k - 1]) * lp[x]
        if k == betas.size - 1:
            break
        for i in range(n):
            b = 1 << i
            on = x | b
            off = on ^ b
            p_on = expit(betas[k] * (lp[on] - lp[off]))
            x = np.where(rng.random(runs) < p_on, on, off)
    log_z0 = n * LOG2
    top = log_w.max()
    log_mean_w = top + math.log(np.mean(np.exp(log_w - top)))
    return AisResult(log_z0 + log_mean_w, log_w, log_z0)


class _ExactMoments:
    """``eta_B`` and ``log Z`` for parameter vectors of one (n, k) model."""

    def __init__(self, n: int, k: int):
        self.n = n
        self.masks = lattice.index_masks(n, k)
        self.features = None
        if (1 << n) * self.masks.size <= _FEATURE_MATRIX_LIMIT:
            self.features = lattice.feature_matrix(n, k)

    def __call__(self, theta_b: np.ndarray) -> tuple[np.ndarray, float]:
        if self.features is not None:
            lp = self.features @ theta_b
        else:
            full = np.zeros(1 << self.n)
            full[self.masks] = theta_b
            lp = lattice.fast_zeta_transform(full, "down")
        top = lp.max()
        w = np.exp(lp - top)
        z = w.sum()
        p = w / z
        if self.features is not None:
            eta_b = self.features.T @ p
        else:
            eta_b = lattice.fast_zeta_transform(p, "up")[self.masks]
        return eta_b, float(top + math.log(z))


def _target_on_b(target_eta, masks: np.ndarray, n: int) -> np.ndarray:
    if isinstance(target_eta, EtaCoordinates):
        if target_eta.n != n:
            raise UsageError(f"target eta on n={target_eta.n}, model on n={n}")
        values = target_eta.eta[masks]
    else:
        values = np.asarray(target_eta, dtype=float)
        if values.shape != masks.shape:
            raise UsageError(f"target must give one eta value per element of B ({masks.size})")
    if np.any(values < 0) or np.any(values > 1):
        raise UsageError("target eta values must lie in [0, 1]")
    return values


def fit_mle(
    target_eta,
    m0: HbmModel,
    fit: FitConfig = FitConfig(),
    gibbs: GibbsConfig = GibbsConfig(),
    ais: AisConfig = AisConfig(),
) -> FitResult:
    """Maximum-likelihood fit by gradient ascent on ``theta_B``.

    The gradient of the mean log-likelihood is ``eta_hat(x) - eta_B(x)`` for
    ``x`` in ``B``. ``target_eta`` is an :class:`EtaCoordinates` or the vector
    of its values on ``B``.

    In exact mode ``eta_B`` comes from the normalized model and the run stops
    once ``max |eta_hat - eta_B| < eta_tolerance``. In sampled mode ``eta_B``
    is estimated from a fresh Gibbs chain every iteration and ``log Z`` from AIS
    at reporting points; the stopping rule is the same but noise usually keeps
    the run going to ``max_iterations``.

    Raises :class:`NonConvergenceError` when the gradient grows a hundredfold.
    """
    masks = m0.masks
    eta_hat = _target_on_b(target_eta, masks, m0.n)
    theta = m0.theta_b.copy()
    lr = fit.learning_rate
    iters = fit.max_iterations
    grad_norms = np.full(iters + 1, np.nan)
    log_zs = np.full(iters + 1, np.nan)
    mean_ll = np.full(iters + 1, np.nan)
    exact = fit.mode == "exact"
    moments = _ExactMoments(m0.n, m0.k) if exact else None
    report_every = fit.report_every
    initial = None
    converged = False
    log_z = float("nan")
    t = 0

    def diagnostics():
        return {
            "iterations": t,
            "grad_norm": grad_norms[t],
            "grad_norms": grad_norms[: t + 1].copy(),
            "log_z": log_zs[: t + 1].copy(),
            "theta_b": theta.copy(),
        }

    for t in range(iters + 1):
        if exact:
            eta_b, log_z = moments(theta)
            log_zs[t] = log_z
            mean_ll[t] = float(eta_hat @ theta) - log_z
        else:
            model_t = m0.with_params(theta_b=theta)
            samples = gibbs_sample(model_t, replace(gibbs, seed=replicate_seed(gibbs.seed, "fit", t)))
            eta_b = estimate_eta(samples, m0.n).eta[masks]
            if t == iters or (report_every and t % report_every == 0):
                run_cfg = replace(ais, seed=replicate_seed(ais.seed, "fit", t))
                log_z = ais_log_z(model_t, run_cfg).log_z_estimate
                log_zs[t] = log_z
                mean_ll[t] = float(eta_hat @ theta) - log_z
        grad = eta_hat - eta_b
        g = float(np.abs(grad).max())
        grad_norms[t] = g
        if initial is None:
            initial = max(g, fit.eta_tolerance)
        if not math.isfinite(g) or g > 100.0 * initial:
            raise NonConvergenceError(
                f"gradient norm grew from {initial:.3g} to {g:.3g} at iteration {t}",
                diagnostics(),
            )
        if g < fit.eta_tolerance:
            converged = True
            break
        if t == iters:
            break
        theta += lr * grad

    if not exact and not math.isfinite(log_zs[t]):
        run_cfg = replace(ais, seed=replicate_seed(ais.seed, "fit", t))
        log_z = ais_log_z(m0.with_params(theta_b=theta), run_cfg).log_z_estimate
        log_zs[t] = log_z
        mean_ll[t] = float(eta_hat @ theta) - log_z
    model = m0.with_params(theta_b=theta, theta_bottom=-log_z, normalized=True)
    trace = {
        "iteration": np.arange(t + 1),
        "grad_norm": grad_norms[: t + 1],
        "log_z": log_zs[: t + 1],
        "mean_log_likelihood": mean_ll[: t + 1],
    }
    return FitResult(model, t, grad_norms[t], converged, trace)


def log_likelihood(m: HbmModel, d: EmpiricalDataset, log_z: float) -> float:
    """``N sum_x p_hat(x) log p_B(x)`` with the supplied ``log Z``."""
    if d.n != m.n:
        raise UsageError(f"dataset on n={d.n}, model on n={m.n}")
    counts = d.counts
    return float(counts @ m.log_potentials - counts.sum() * log_z)


# -- persistence -------------------------------------------------------------


def save_model(path, m: HbmModel, provenance: dict | None = None) -> None:
    rows = (
        (j, int(b), state_string(int(b), m.n), fmt_float(v))
        for j, (b, v) in enumerate(zip(m.masks, m.theta_b))
    )
    header = {
        "model": "hbm",
        "n": m.n,
        "k": m.k,
        "normalized": m.normalized,
        "theta_bottom": fmt_float(m.theta_bottom),
        "provenance": provenance or {},
    }
    write_text_file(path, "hbm-model", header, ["position", "bits", "state", "theta"], rows)


def load_model(path) -> tuple[HbmModel, dict]:
    header, rows = read_text_file(path, "hbm-model")
    n, k = header["n"], header["k"]
    masks = lattice.index_masks(n, k)
    if len(rows) != masks.size:
        raise ValueError(f"{path}: expected {masks.size} parameters, found {len(rows)}")
    theta = []
    for j, (pos, bits, _state, value) in enumerate(rows):
        if int(pos) != j or int(bits) != masks[j]:
            raise ValueError(f"{path}: parameter {j} out of canonical order")
        theta.append(float(value))
    m = HbmModel(n, k, theta, float(header["theta_bottom"]), bool(header["normalized"]))
    return m, header.get("provenance", {})
