"""Shared fixtures: a small analytic dataset and an untrained surrogate."""

import numpy as np
import pytest
from numpy.random import default_rng

from protodose import datasets, nn, uq
from protodose.phantom import InputDistribution, VoxelGrid

BRAGG_MEAN = (0.00246, 1.75, 1.0, 130.0)
BRAGG_SIGMA = (0.000128, 0.0102, 0.01, 5.0)
BRAGG_LOWER = (1e-4, 1.05, 0.05, 10.0)


@pytest.fixture(scope="session")
def bragg_dist():
    return InputDistribution(np.array(BRAGG_MEAN), np.array(BRAGG_SIGMA),
                             names=("alpha", "p", "rho", "e_peak"),
                             lower=np.array(BRAGG_LOWER))


@pytest.fixture(scope="session")
def depth_grid():
    return VoxelGrid((150,), (0.0,), (20.0,))


@pytest.fixture(scope="session")
def tiny_dataset(bragg_dist, depth_grid):
    """40 analytic depth-dose curves, enough for IO and plumbing tests."""
    return datasets.generate_1d(40, bragg_dist, depth_grid, 3.0, 16, seed=7)


@pytest.fixture()
def random_surrogate():
    """Untrained dropout surrogate whose standardisation is the identity."""
    cfg = nn.MLPConfig(3, 32, 1, 2, 5, p_drop=0.1)
    params = nn.init_params(cfg, default_rng(42))
    return uq.Surrogate(params, cfg, np.zeros(3), np.ones(3))
