"""Hierarchical (higher-order) Boltzmann machines on the Boolean lattice.

Log-linear coordinates, exact and sampled maximum-likelihood fitting, RBM
contrastive divergence, and a KL bias/variance decomposition harness.
"""

__version__ = "0.1.0"

from . import decomposition, distribution, hbm, lattice, rbm, seeding, synthdata  # noqa: E402

__all__ = ["decomposition", "distribution", "hbm", "lattice", "rbm", "seeding", "synthdata", "__version__"]
