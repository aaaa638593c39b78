import numpy as np
import pytest

from flatscan.selftest import random_material


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def make_material():
    """Factory for small random valid materials."""
    def make(seed=0, h=8, w=8, holes=True):
        return random_material(np.random.default_rng(seed), h, w, holes)
    return make
