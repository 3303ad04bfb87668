"""Binary restricted Boltzmann machine trained by contrastive divergence.

Energy of a joint state ``(v, h)``::

    Phi(v, h) = -v.b_v - h.b_h - v W h

Visible states map to lattice outcomes with ``v_i`` as bit ``i``, so the exact
visible marginal is a :class:`DenseDistribution` on the same lattice as the
HBM.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp

from . import lattice
from .distribution import DenseDistribution, EmpiricalDataset, empirical_distribution, kl_divergence
from .errors import UsageError
from .seeding import make_rng
from .textio import fmt_float, read_text_file, write_text_file


@dataclass(frozen=True, eq=False)
class RbmModel:
    visible_bias: np.ndarray
    hidden_bias: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        bv = np.array(self.visible_bias, dtype=float, copy=True).reshape(-1)
        bh = np.array(self.hidden_bias, dtype=float, copy=True).reshape(-1)
        w = np.array(self.weights, dtype=float, copy=True).reshape(bv.size, bh.size)
        for a in (bv, bh, w):
            if not np.all(np.isfinite(a)):
                raise UsageError("RBM parameters must be finite")
            a.setflags(write=False)
        if bv.size < 1:
            raise UsageError("an RBM needs at least one visible unit")
        object.__setattr__(self, "visible_bias", bv)
        object.__setattr__(self, "hidden_bias", bh)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.visible_bias.size

    @property
    def m(self) -> int:
        return self.hidden_bias.size

    @classmethod
    def zeros(cls, n: int, m: int) -> "RbmModel":
        return cls(np.zeros(n), np.zeros(m), np.zeros((n, m)))

    @classmethod
    def initialize(cls, n: int, m: int, seed: int, scale: float = 0.01) -> "RbmModel":
        """Zero biases, weights uniform in ``[-scale, scale]``."""
        rng = make_rng(seed)
        return cls(np.zeros(n), np.zeros(m), rng.uniform(-scale, scale, size=(n, m)))

    def apply(self, delta: "RbmDelta") -> "RbmModel":
        return RbmModel(
            self.visible_bias + delta.visible_bias,
            self.hidden_bias + delta.hidden_bias,
            self.weights + delta.weights,
        )


@dataclass(frozen=True, eq=False)
class RbmDelta:
    weights: np.ndarray
    visible_bias: np.ndarray
    hidden_bias: np.ndarray


@dataclass(frozen=True)
class CdConfig:
    """Contrastive-divergence settings.

    Training length is ``epochs`` full passes when given; otherwise epochs are
    chosen per dataset so that about ``total_updates`` minibatch updates run.
    """

    learning_rate: float = 0.1
    cd_steps: int = 1
    epochs: int | None = None
    batch_size: int = 32
    seed: int = 0
    total_updates: int = 10_000
    use_probabilities: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0 or self.cd_steps < 1 or self.batch_size < 1:
            raise UsageError("learning_rate, cd_steps and batch_size must be positive")
        if self.epochs is not None and self.epochs < 1:
            raise UsageError("epochs must be positive")
        if self.total_updates < 1:
            raise UsageError("total_updates must be positive")


def hidden_conditional(m: RbmModel, v) -> np.ndarray:
    """``p(h_j = 1 | v) = sigmoid(b_h + v W)``; ``v`` may be a batch of rows."""
    return expit(m.hidden_bias + np.asarray(v, dtype=float) @ m.weights)


def visible_conditional(m: RbmModel, h) -> np.ndarray:
    """``p(v_i = 1 | h) = sigmoid(b_v + W h)``; ``h`` may be a batch of rows."""
    return expit(m.visible_bias + np.asarray(h, dtype=float) @ m.weights.T)


def cd_delta(v, h, v_neg, h_neg, learning_rate: float) -> RbmDelta:
    """Batch-averaged CD update from positive ``(v, h)`` and negative ``(v', h')`` states."""
    v, h, v_neg, h_neg = (
        a if isinstance(a, np.ndarray) and a.ndim == 2 and a.dtype == float else np.atleast_2d(np.asarray(a, float))
        for a in (v, h, v_neg, h_neg)
    )
    scale = learning_rate / v.shape[0]
    return RbmDelta(
        scale * (v.T @ h - v_neg.T @ h_neg),
        scale * (v.sum(axis=0) - v_neg.sum(axis=0)),
        scale * (h.sum(axis=0) - h_neg.sum(axis=0)),
    )


def _bernoulli(p: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return (rng.random(p.shape) < p).astype(float)


def cd_update(m: RbmModel, batch, cfg: CdConfig, rng: np.random.Generator, return_states: bool = False):
    """One CD-``k`` step on a minibatch of visible states.

    ``h`` is sampled from ``p(h | v)``; then ``cd_steps`` alternating
    reconstructions give ``(v', h')``. With ``return_states`` the sampled
    ``(v, h, v', h')`` are returned with the delta.
    """
    v = np.atleast_2d(np.asarray(batch, dtype=float))
    if v.shape[0] == 0:
        raise UsageError("empty minibatch")
    h = _bernoulli(hidden_conditional(m, v), rng)
    h_neg = h
    for _ in range(cfg.cd_steps):
        v_neg = _bernoulli(visible_conditional(m, h_neg), rng)
        p_h = hidden_conditional(m, v_neg)
        h_neg = p_h if cfg.use_probabilities else _bernoulli(p_h, rng)
    delta = cd_delta(v, h, v_neg, h_neg, cfg.learning_rate)
    if return_states:
        return delta, (v, h, v_neg, h_neg)
    return delta


def visible_states(n: int) -> np.ndarray:
    """All ``2**n`` visible vectors, row ``x`` holding the bits of ``x``."""
    return ((np.arange(1 << n)[:, None] >> np.arange(n)) & 1).astype(float)


def _check_cap(m: RbmModel) -> None:
    if m.n > lattice.MAX_N:
        raise UsageError(f"n = {m.n} exceeds the dense cap of {lattice.MAX_N}")


def _joint_log_potentials(m: RbmModel) -> np.ndarray:
    """``-Phi(v, h)`` for every visible row and hidden column."""
    vs = visible_states(m.n)
    hs = visible_states(m.m) if m.m else np.zeros((1, 0))
    return (vs @ m.visible_bias)[:, None] + (hs @ m.hidden_bias)[None, :] + vs @ m.weights @ hs.T


def _visible_log_potentials(m: RbmModel) -> np.ndarray:
    """``log sum_h exp(-Phi(v, h))`` for every visible state.

    Brute force over the ``2**(n+m)`` joint states while that fits the dense
    cap; beyond it each hidden unit is summed out in closed form
    (``log(1 + exp(b_j + (vW)_j))``), which is equally exact.
    """
    _check_cap(m)
    if m.n + m.m <= lattice.MAX_N:
        return logsumexp(_joint_log_potentials(m), axis=1)
    return _free_energy_ll(m, visible_states(m.n))


def exact_log_z_rbm(m: RbmModel) -> float:
    return float(logsumexp(_visible_log_potentials(m)))


def exact_visible_marginal(m: RbmModel) -> DenseDistribution:
    """``p(v) = sum_h p(v, h)``, normalized by the exact partition function."""
    log_pv = _visible_log_potentials(m)
    probs = np.exp(log_pv - logsumexp(log_pv))
    return DenseDistribution(probs / probs.sum())


def parameter_count(m: RbmModel) -> int:
    return (m.n + m.m) + m.n * m.m


@dataclass(eq=False)
class TrainResult:
    model: RbmModel
    updates: int
    trace: dict = field(repr=False)


def train_cd(
    m0: RbmModel,
    data: EmpiricalDataset,
    cfg: CdConfig = CdConfig(),
    trace_every: int = 1,
) -> TrainResult:
    """Shuffled-minibatch CD training.

    ``trace_every`` controls how often (in epochs) the exact
    ``KL(P_hat, model marginal)`` is recorded; 0 disables the trace. Models
    too large for exact evaluation record the mean free-energy log-likelihood
    proxy instead (unnormalized).
    """
    if data.n != m0.n:
        raise UsageError(f"dataset on n={data.n}, model has {m0.n} visible units")
    rng = make_rng(cfg.seed)
    states = visible_states(m0.n)[data.samples()]
    size = states.shape[0]
    if size == 0:
        raise UsageError("empty dataset")
    batch = min(cfg.batch_size, size)
    per_epoch = math.ceil(size / batch)
    if cfg.epochs is not None:
        epochs, budget = cfg.epochs, cfg.epochs * per_epoch
    else:
        budget = cfg.total_updates
        epochs = math.ceil(budget / per_epoch)
    exact = m0.n <= lattice.MAX_N
    p_hat = empirical_distribution(data) if trace_every and exact else None
    trace = {"epoch": [], "updates": [], "metric": [], "metric_name": "kl" if exact else "free_energy_ll"}

    def record(epoch, updates, model):
        trace["epoch"].append(epoch)
        trace["updates"].append(updates)
        if exact:
            trace["metric"].append(kl_divergence(p_hat, exact_visible_marginal(model)))
        else:
            trace["metric"].append(float(np.mean(_free_energy_ll(model, states))))

    # parameters live in mutable arrays during the loop; RbmModel is rebuilt at trace points
    bv, bh, w = (a.copy() for a in (m0.visible_bias, m0.hidden_bias, m0.weights))
    current = _Params(bv, bh, w)
    if trace_every:
        record(0, 0, m0)
    updates = 0
    for epoch in range(1, epochs + 1):
        order = rng.permutation(size)
        for start in range(0, size, batch):
            if updates >= budget:
                break
            delta = cd_update(current, states[order[start : start + batch]], cfg, rng)
            w += delta.weights
            bv += delta.visible_bias
            bh += delta.hidden_bias
            updates += 1
        if trace_every and (epoch % trace_every == 0 or epoch == epochs):
            record(epoch, updates, RbmModel(bv, bh, w))
        if updates >= budget:
            break
    return TrainResult(RbmModel(bv, bh, w), updates, trace)


class _Params:
    """Mutable stand-in for :class:`RbmModel` inside the training loop."""

    __slots__ = ("visible_bias", "hidden_bias", "weights")

    def __init__(self, bv, bh, w):
        self.visible_bias, self.hidden_bias, self.weights = bv, bh, w


def _free_energy_ll(m: RbmModel, v: np.ndarray) -> np.ndarray:
    return v @ m.visible_bias + np.logaddexp(0.0, m.hidden_bias + v @ m.weights).sum(axis=1)


# -- persistence -------------------------------------------------------------


def save_model(path, m: RbmModel, provenance: dict | None = None) -> None:
    rows = []
    rows += [("visible_bias", i, "", fmt_float(v)) for i, v in enumerate(m.visible_bias)]
    rows += [("hidden_bias", "", j, fmt_float(v)) for j, v in enumerate(m.hidden_bias)]
    rows += [
        ("weight", i, j, fmt_float(m.weights[i, j])) for i in range(m.n) for j in range(m.m)
    ]
    header = {"model": "rbm", "n": m.n, "m": m.m, "provenance": provenance or {}}
    write_text_file(path, "rbm-model", header, ["param", "i", "j", "value"], rows)


def load_model(path) -> tuple[RbmModel, dict]:
    header, rows = read_text_file(path, "rbm-model")
    n, m = header["n"], header["m"]
    bv, bh, w = np.zeros(n), np.zeros(m), np.zeros((n, m))
    seen = 0
    for kind, i, j, value in rows:
        if kind == "visible_bias":
            bv[int(i)] = float(value)
        elif kind == "hidden_bias":
            bh[int(j)] = float(value)
        elif kind == "weight":
            w[int(i), int(j)] = float(value)
        else:
            raise ValueError(f"{path}: unknown parameter kind {kind!r}")
        seen += 1
    if seen != n + m + n * m:
        raise ValueError(f"{path}: expected {n + m + n * m} parameters, found {seen}")
    return RbmModel(bv, bh, w), header.get("provenance", {})
