"""Synthetic ground truth and multinomial datasets for the experiment grid."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import lattice
from .distribution import DenseDistribution, EmpiricalDataset
from .errors import UsageError
from .seeding import make_rng, replicate_seed

log = logging.getLogger(__name__)

# sample-size grid of the original experiment
FULL_SAMPLE_SIZES = (10, 30, 50, 100, 300, 500, 1_000, 3_000, 5_000, 10_000, 30_000, 50_000)
FULL_REPLICATES = 24

__all__ = [
    "ExperimentGrid",
    "FULL_REPLICATES",
    "FULL_SAMPLE_SIZES",
    "draw_dataset",
    "generate_true_distribution",
    "replicate_seed",
]


@dataclass(frozen=True)
class ExperimentGrid:
    n: int = 10
    sample_sizes: tuple[int, ...] = FULL_SAMPLE_SIZES
    replicates: int = FULL_REPLICATES
    base_seed: int = 0
    hbm_orders: tuple[int, ...] = (1, 4, 7, 10)
    rbm_hidden: tuple[int, ...] = (0, 5, 10, 15)
    truth_seed: int = field(init=False)

    def __post_init__(self):
        lattice.check_n(self.n)
        sizes = tuple(int(s) for s in self.sample_sizes)
        if not sizes or list(sizes) != sorted(sizes) or sizes[0] < 1:
            raise UsageError("sample_sizes must be positive and sorted ascending")
        if self.replicates < 1:
            raise UsageError("need at least one replicate")
        object.__setattr__(self, "sample_sizes", sizes)
        object.__setattr__(self, "hbm_orders", tuple(int(k) for k in self.hbm_orders))
        object.__setattr__(self, "rbm_hidden", tuple(int(m) for m in self.rbm_hidden))
        object.__setattr__(self, "truth_seed", replicate_seed(self.base_seed, "truth", 0))

    def dataset_seed(self, sample_size: int, replicate: int) -> int:
        return dataset_seed(self.base_seed, sample_size, replicate)


def dataset_seed(base_seed: int, sample_size: int, replicate: int) -> int:
    return replicate_seed(base_seed, f"dataset:{int(sample_size)}", replicate)


def generate_true_distribution(n: int, seed: int) -> DenseDistribution:
    """Independent uniform weights on every outcome, normalized to sum to one."""
    n = lattice.check_n(n)
    u = make_rng(seed).random(1 << n)
    zeros = u == 0.0
    if zeros.any():
        log.warning("perturbed %d zero draw(s) to the smallest positive float", int(zeros.sum()))
        u[zeros] = np.nextafter(0.0, 1.0)
    return DenseDistribution(u / u.sum())


def draw_dataset(p_star: DenseDistribution, sample_size: int, seed: int) -> EmpiricalDataset:
    """Multinomial counts of ``sample_size`` draws from ``p_star``."""
    if sample_size < 1:
        raise UsageError("sample size must be at least 1")
    counts = make_rng(seed).multinomial(int(sample_size), p_star.probs)
    return EmpiricalDataset(counts)
