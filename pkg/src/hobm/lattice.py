"""Boolean lattice of subsets of ``n`` variables.

Outcomes are bitmasks: bit ``i`` set means variable ``i`` (0-based) is on.
Dense per-outcome arrays are indexed by the bitmask itself, so a vector of
length ``2**n`` holds one value per lattice node.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import comb
from typing import Iterable

import numpy as np

from .errors import UsageError

MAX_N = 20


def check_n(n: int) -> int:
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise UsageError(f"variable count must be a positive integer, got {n!r}")
    if n > MAX_N:
        raise UsageError(f"n={n} exceeds the dense cap n <= {MAX_N} (2**n storage)")
    return int(n)


def popcount(bits: int) -> int:
    return int(bits).bit_count()


@dataclass(frozen=True, order=True)
class Outcome:
    """A joint state of ``n`` binary variables, equivalently a subset of them."""

    bits: int
    n: int

    def __post_init__(self):
        check_n(self.n)
        if not 0 <= self.bits < (1 << self.n):
            raise UsageError(f"bits={self.bits} out of range for n={self.n}")

    @classmethod
    def from_vars(cls, variables: Iterable[int], n: int) -> "Outcome":
        bits = 0
        for i in variables:
            if not 0 <= i < n:
                raise UsageError(f"variable index {i} out of range for n={n}")
            bits |= 1 << i
        return cls(bits, n)

    @classmethod
    def bottom(cls, n: int) -> "Outcome":
        return cls(0, n)

    @property
    def order(self) -> int:
        return popcount(self.bits)

    @property
    def vars(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.n) if self.bits >> i & 1)

    def state(self) -> np.ndarray:
        """The outcome as a 0/1 vector ``(x_0, ..., x_{n-1})``."""
        return (self.bits >> np.arange(self.n)) & 1

    def __str__(self):
        return "{" + ",".join(str(i) for i in self.vars) + "}"


def _same_n(s: Outcome, x: Outcome) -> None:
    if s.n != x.n:
        raise UsageError(f"outcomes live on different lattices (n={s.n} vs n={x.n})")


def leq(s: Outcome, x: Outcome) -> bool:
    """Partial order: ``s <= x`` iff ``s`` is a subset of ``x``."""
    _same_n(s, x)
    return s.bits & x.bits == s.bits


def zeta(s: Outcome, x: Outcome) -> int:
    return 1 if leq(s, x) else 0


def mobius(s: Outcome, x: Outcome) -> int:
    """Möbius function of the Boolean lattice: ``(-1)**(|x|-|s|)`` on ``s <= x``.

    The closed form agrees with the recursive definition
    (:func:`mobius_recursive`); the test-suite checks this exhaustively.
    """
    if not leq(s, x):
        return 0
    return -1 if popcount(x.bits ^ s.bits) & 1 else 1


@lru_cache(maxsize=None)
def _mobius_rec(s: int, x: int) -> int:
    if s == x:
        return 1
    if s & x != s:
        return 0
    # -sum over s <= u < x of mu(s, u); enumerate u = s | t for t a proper subset of x \ s
    free = x & ~s
    total = 0
    t = free
    while True:
        t = (t - 1) & free
        total += _mobius_rec(s, s | t)
        if t == 0:
            break
    return -total


def mobius_recursive(s: Outcome, x: Outcome) -> int:
    """Möbius function evaluated by its defining recursion (slow, for checks)."""
    _same_n(s, x)
    return _mobius_rec(s.bits, x.bits)


def model_index_set(n: int, k: int) -> list[Outcome]:
    """Non-empty outcomes with at most ``k`` elements, in canonical order.

    Canonical order is ascending popcount, then ascending bitmask.
    """
    return [Outcome(int(b), n) for b in index_masks(n, k)]


@lru_cache(maxsize=64)
def _index_masks(n: int, k: int) -> np.ndarray:
    masks = np.arange(1, 1 << n, dtype=np.int64)
    orders = popcounts(n)[1:]
    keep = orders <= k
    masks, orders = masks[keep], orders[keep]
    out = masks[np.lexsort((masks, orders))]
    out.setflags(write=False)
    return out


def index_masks(n: int, k: int) -> np.ndarray:
    """Bitmasks of :func:`model_index_set` as a read-only int64 array."""
    n = check_n(n)
    if not isinstance(k, (int, np.integer)) or not 1 <= k <= n:
        raise UsageError(f"interaction order must satisfy 1 <= k <= n={n}, got {k!r}")
    return _index_masks(n, int(k))


def index_set_size(n: int, k: int) -> int:
    return sum(comb(n, i) for i in range(1, k + 1))


@lru_cache(maxsize=32)
def _popcounts(n: int) -> np.ndarray:
    pc = np.zeros(1 << n, dtype=np.int64)
    for i in range(n):
        pc[1 << i : 1 << (i + 1)] = pc[: 1 << i] + 1
    pc.setflags(write=False)
    return pc


def popcounts(n: int) -> np.ndarray:
    """``|x|`` for every outcome ``x`` of the ``n``-variable lattice."""
    return _popcounts(check_n(n))


def _n_from_length(length: int) -> int:
    n = int(length).bit_length() - 1
    if length < 2 or (1 << n) != length:
        raise UsageError(f"expected a vector of length 2**n with n >= 1, got length {length}")
    return check_n(n)


def _transform(values, direction: str, sign: float) -> np.ndarray:
    g = np.array(values, dtype=float, copy=True)
    if g.ndim != 1:
        raise UsageError("transforms act on 1-d per-outcome vectors")
    n = _n_from_length(g.shape[0])
    if direction not in ("up", "down"):
        raise UsageError(f"direction must be 'up' or 'down', got {direction!r}")
    for i in range(n):
        # axis 1 of the view is bit i
        v = g.reshape(-1, 2, 1 << i)
        if direction == "down":
            v[:, 1, :] += sign * v[:, 0, :]
        else:
            v[:, 0, :] += sign * v[:, 1, :]
    return g


def fast_zeta_transform(values, direction: str = "down") -> np.ndarray:
    """Subset sums in ``O(n 2**n)``.

    ``down``: ``g(x) = sum_{s <= x} f(s)``; ``up``: ``g(x) = sum_{s >= x} f(s)``.
    """
    return _transform(values, direction, 1.0)


def fast_mobius_transform(values, direction: str = "down") -> np.ndarray:
    """Inverse of :func:`fast_zeta_transform` for the same ``direction``."""
    return _transform(values, direction, -1.0)


def feature_matrix(n: int, k: int) -> np.ndarray:
    """``F[x, j] = zeta(B_j, x)`` for the canonical index set ``B`` of order ``k``."""
    masks = index_masks(n, k)
    xs = np.arange(1 << n, dtype=np.int64)
    return ((xs[:, None] & masks[None, :]) == masks[None, :]).astype(float)
