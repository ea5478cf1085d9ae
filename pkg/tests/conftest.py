import numpy as np
import pytest

from nlfb import build_grid, enumerate_lattice, fractional_kernel


@pytest.fixture(scope="session")
def grid_1d_small():
    # 20 nodes, 10 interior; fast enough for exhaustive checks
    return build_grid(1, 0.2, 2.0)


@pytest.fixture(scope="session")
def grid_1d_medium():
    return build_grid(1, 0.05, 2.0)


@pytest.fixture(scope="session")
def coarse_4node_grid():
    # +-0.25 interior, +-0.75 exterior: the minimal grid with both roles
    return enumerate_lattice(1, 0.5, 1.0, 0.5)


@pytest.fixture(scope="session")
def kernel_s05():
    return fractional_kernel(0.5)


def random_field_values(grid, rng, lo=-1.0, hi=1.0):
    return rng.uniform(lo, hi, grid.n_nodes)
