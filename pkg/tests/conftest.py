import numpy as np
import pytest

from stepbayes import HierarchyPrior, LabeledDataset
from stepbayes.datasim import generate_dataset_1d

# Seeded n=5 toy dataset shared by the oracle-comparison tests.
TOY_SEED = 11


@pytest.fixture(scope="session")
def toy():
    return generate_dataset_1d("f0", 5, TOY_SEED)


@pytest.fixture(scope="session")
def geom_half():
    return HierarchyPrior.geometric(0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)


def random_dataset(rng, n, ties=False):
    if ties:
        xs = rng.integers(0, 8, size=n) / 8.0
    else:
        xs = rng.random(n)
    return LabeledDataset(xs, rng.integers(0, 2, size=n))
