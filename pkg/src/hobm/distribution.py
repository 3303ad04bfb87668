"""Dense distributions over {0,1}^n and their log-linear coordinates.

Three equivalent descriptions of a strictly positive distribution:

* ``p``     probabilities, one per outcome;
* ``theta`` natural parameters, ``log p(x) = sum_{s <= x} theta(s)``;
* ``eta``   expectation parameters, ``eta(x) = sum_{s >= x} p(s)``, the
            probability that every variable in ``x`` is on.

All conversions run through the fast zeta/Möbius transforms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import lattice
from .errors import (
    DivergenceUndefinedError,
    DomainError,
    InconsistentEtaError,
    NumericRangeError,
    UsageError,
)
from .textio import fmt_float, read_text_file, state_string, write_text_file

NORM_TOL = 1e-9


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    if arr.ndim != 1:
        raise UsageError("expected a 1-d per-outcome vector")
    arr.setflags(write=False)
    return arr


def _n_of(arr: np.ndarray) -> int:
    return lattice._n_from_length(arr.shape[0])


@dataclass(frozen=True, eq=False)
class DenseDistribution:
    probs: np.ndarray
    n: int = field(init=False)

    def __post_init__(self):
        probs = _frozen(self.probs)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "n", _n_of(probs))
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise UsageError("probabilities must be finite and non-negative")
        total = probs.sum()
        if abs(total - 1.0) > NORM_TOL:
            raise UsageError(f"probabilities sum to {total!r}, not 1 (tolerance {NORM_TOL})")

    @property
    def strictly_positive(self) -> bool:
        return bool(np.all(self.probs > 0))

    @classmethod
    def uniform(cls, n: int) -> "DenseDistribution":
        n = lattice.check_n(n)
        return cls(np.full(1 << n, 2.0**-n))

    def __len__(self):
        return self.probs.shape[0]

    def __getitem__(self, x):
        return self.probs[getattr(x, "bits", x)]


@dataclass(frozen=True, eq=False)
class ThetaCoordinates:
    theta: np.ndarray
    n: int = field(init=False)

    def __post_init__(self):
        theta = _frozen(self.theta)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "n", _n_of(theta))

    @property
    def bottom(self) -> float:
        return float(self.theta[0])

    @property
    def log_z(self) -> float:
        """``psi(theta) = -theta(bottom)``, the log partition function."""
        return -float(self.theta[0])

    def log_total_mass(self) -> float:
        """``log sum_x exp(sum_{s <= x} theta(s))``; zero when theta is normalized."""
        return float(logsumexp(lattice.fast_zeta_transform(self.theta, "down")))

    @property
    def is_normalized(self) -> bool:
        return abs(self.log_total_mass()) <= NORM_TOL


@dataclass(frozen=True, eq=False)
class EtaCoordinates:
    eta: np.ndarray
    n: int = field(init=False)

    def __post_init__(self):
        eta = _frozen(self.eta)
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "n", _n_of(eta))
        if abs(eta[0] - 1.0) > NORM_TOL:
            raise UsageError(f"eta(bottom) must be 1, got {eta[0]!r}")

    def __getitem__(self, x):
        return self.eta[getattr(x, "bits", x)]


@dataclass(frozen=True, eq=False)
class EmpiricalDataset:
    counts: np.ndarray
    n: int = field(init=False)

    def __post_init__(self):
        counts = np.array(self.counts, copy=True)
        if counts.ndim != 1 or not np.all(counts == np.floor(counts)) or np.any(counts < 0):
            raise UsageError("counts must be a 1-d vector of non-negative integers")
        counts = _frozen(counts, dtype=np.int64)
        if counts.sum() < 1:
            raise UsageError("empty dataset (N = 0)")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "n", _n_of(counts))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def samples(self) -> np.ndarray:
        """Outcome bitmasks repeated by count, in ascending order."""
        return np.repeat(np.arange(self.counts.shape[0], dtype=np.int64), self.counts)


def theta_from_p(p: DenseDistribution) -> ThetaCoordinates:
    """``theta(x) = sum_s mu(s, x) log p(s)``."""
    if not p.strictly_positive:
        raise DomainError("theta coordinates need a strictly positive distribution")
    return ThetaCoordinates(lattice.fast_mobius_transform(np.log(p.probs), "down"))


def p_from_theta(t: ThetaCoordinates, full_output: bool = False):
    """``p(x) = exp(sum_{s <= x} theta(s))``, renormalized if theta(bottom) is off.

    With ``full_output`` the log-normalizer correction that was removed is
    returned alongside the distribution (0.0 for normalized input).
    """
    logp = lattice.fast_zeta_transform(t.theta, "down")
    if not np.all(np.isfinite(logp)):
        raise NumericRangeError("non-finite log-probability; theta out of range")
    correction = float(logsumexp(logp))
    probs = np.exp(logp - correction)
    dist = DenseDistribution(probs / probs.sum())
    if full_output:
        return dist, correction
    return dist


def eta_from_p(p: DenseDistribution) -> EtaCoordinates:
    eta = lattice.fast_zeta_transform(p.probs, "up")
    eta[0] = 1.0
    return EtaCoordinates(eta)


def p_from_eta(e: EtaCoordinates) -> DenseDistribution:
    probs = lattice.fast_mobius_transform(e.eta, "up")
    worst = probs.min()
    if worst < -NORM_TOL:
        raise InconsistentEtaError(f"eta implies a negative probability ({worst:.3g})")
    probs = np.clip(probs, 0.0, None)
    return DenseDistribution(probs / probs.sum())


def kl_divergence(p: DenseDistribution, q: DenseDistribution) -> float:
    """``sum_x p(x) log(p(x)/q(x))`` with ``0 log 0 = 0``."""
    if p.n != q.n:
        raise UsageError(f"distributions on different lattices (n={p.n} vs n={q.n})")
    support = p.probs > 0
    if np.any(q.probs[support] <= 0):
        bad = np.flatnonzero(support & (q.probs <= 0))
        raise DivergenceUndefinedError(
            f"q vanishes on {bad.size} outcome(s) in the support of p, e.g. {int(bad[0])}"
        )
    ps, qs = p.probs[support], q.probs[support]
    return float(np.sum(ps * (np.log(ps) - np.log(qs))))


def empirical_distribution(d: EmpiricalDataset) -> DenseDistribution:
    if d.total < 1:
        raise UsageError("empty dataset (N = 0)")
    return DenseDistribution(d.counts / d.total)


# -- persistence -------------------------------------------------------------


def save_distribution(path, p: DenseDistribution, provenance: dict | None = None) -> None:
    rows = ((x, state_string(x, p.n), fmt_float(v)) for x, v in enumerate(p.probs))
    write_text_file(
        path, "distribution", {"n": p.n, "provenance": provenance or {}},
        ["index", "state", "probability"], rows,
    )


def load_distribution(path) -> tuple[DenseDistribution, dict]:
    header, rows = read_text_file(path, "distribution")
    probs = _read_records(rows, header["n"], float)
    return DenseDistribution(probs), header.get("provenance", {})


def save_dataset(path, d: EmpiricalDataset, provenance: dict | None = None) -> None:
    rows = ((x, state_string(x, d.n), int(c)) for x, c in enumerate(d.counts))
    write_text_file(
        path, "counts", {"n": d.n, "total": d.total, "provenance": provenance or {}},
        ["index", "state", "count"], rows,
    )


def load_dataset(path) -> tuple[EmpiricalDataset, dict]:
    header, rows = read_text_file(path, "counts")
    counts = _read_records(rows, header["n"], int)
    d = EmpiricalDataset(counts)
    if d.total != header["total"]:
        raise ValueError(f"{path}: counts sum to {d.total}, header says {header['total']}")
    return d, header.get("provenance", {})


def _read_records(rows, n: int, cast) -> list:
    if len(rows) != 1 << n:
        raise ValueError(f"expected {1 << n} records for n={n}, found {len(rows)}")
    values = []
    for expected, (index, state, value) in enumerate(rows):
        if int(index) != expected or state != state_string(expected, n):
            raise ValueError(f"record {expected} out of canonical order")
        values.append(cast(value))
    return values
