import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # make oracles importable

from latticenet.geometry import GridShape, LatticeKind
from latticenet.grid import DenseGrid, SparseGrid

ALL_LATTICES = list(LatticeKind)


def random_dense(lattice, m, n, sparsity, rng, ground=None):
    """Dense grid whose sites are active with probability ``sparsity``."""
    shape = GridShape(lattice, m)
    g = np.zeros(n) if ground is None else np.asarray(ground, dtype=float)
    values = np.tile(g, (shape.num_sites, 1))
    mask = rng.random(shape.num_sites) < sparsity
    values[mask] = g + rng.normal(size=(mask.sum(), n))
    return DenseGrid(shape, values)


def random_sparse(lattice, m, n, sparsity, rng, ground=None):
    g = np.zeros(n) if ground is None else np.asarray(ground, dtype=float)
    return SparseGrid.from_dense(random_dense(lattice, m, n, sparsity, rng, ground), g)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
