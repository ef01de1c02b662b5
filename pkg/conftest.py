import numpy as np
import pytest

from services.grids import BaselineGrid, CountGrid
from services.zone_builder import AdjacencyRelation, DistanceMatrix


@pytest.fixture
def collinear():
    """Locations A, B, C at 0, 1 and 3 on a line"""
    return DistanceMatrix.from_coordinates([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]])


@pytest.fixture
def path_graph():
    """A - B - C"""
    return AdjacencyRelation.from_edges(3, [(0, 1), (1, 2)])


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def write_csv(tmp_path):
    """Write text to a CSV under tmp_path and return its path"""
    def _write(name, text):
        path = tmp_path / name
        path.write_text(text)
        return str(path)
    return _write


@pytest.fixture
def make_grids():
    """Random (counts, baselines) pair; zero_p gives plain Poisson baselines"""
    def _make(rng, n, T, p_max=0.5, mu_range=(0.5, 8.0), zero_p=False):
        p = np.zeros((n, T)) if zero_p else rng.uniform(0.0, p_max, size=(n, T))
        mu = rng.uniform(*mu_range, size=(n, T))
        y = rng.poisson(mu * rng.uniform(0.5, 2.0, size=(n, T)))
        y[rng.random((n, T)) < p] = 0
        return CountGrid(y), BaselineGrid(p, mu)
    return _make
