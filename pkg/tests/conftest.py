import numpy as np
import pytest

from stepgrow.data_gen import GenSpec, generate_separable
from stepgrow.loss_core import Dataset


def random_dataset(rng, n=None, d=None):
    """Unit-ball features with random +-1 labels (no separability needed)."""
    n = n or int(rng.integers(3, 40))
    d = d or int(rng.integers(2, 12))
    x = rng.standard_normal((n, d))
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    x = x / np.maximum(norms, 1.0) * rng.random((n, 1))
    y = rng.choice([-1.0, 1.0], size=n)
    return Dataset(features=x, labels=y)


@pytest.fixture
def rng():
    return np.random.default_rng(777)


@pytest.fixture(scope="session")
def small_separable():
    return generate_separable(GenSpec(dim=12, count=150, margin=0.3, seed=11))
