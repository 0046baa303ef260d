import numpy as np
import pytest

from gsbd.cracks import FacetSet
from gsbd.grids import Grid, VectorField
from gsbd.problems import slit_facets, tapered_slit_field


@pytest.fixture
def unit_grid_2d():
    return Grid(np.zeros(2), 1.0 / 64, (64, 64))


@pytest.fixture
def slit_setup(unit_grid_2d):
    """The tapered-slit field with its crack on the unit square."""
    u = tapered_slit_field(unit_grid_2d)
    facets = slit_facets(unit_grid_2d)
    return u, facets


def padded_slit(k: float, h: float = 1.0 / 64, **kwargs):
    """Slit field sampled directly on a grid fattened for the strict halo."""
    halo = int(np.ceil(12.0 * np.sqrt(2.0) / k / h)) + 1
    big = Grid(np.zeros(2) - halo * h, h, (int(round(1 / h)) + 2 * halo,) * 2)
    return tapered_slit_field(big, **kwargs)
