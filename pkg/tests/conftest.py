import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import commons  # noqa: E402
from volume import Volume  # noqa: E402


def sphere_mask(n=32, radius=8.0, center=None):
    c = (n - 1) / 2.0 if center is None else center
    z, y, x = np.meshgrid(*(np.arange(n, dtype=np.float64),) * 3, indexing="ij")
    inside = (x - c) ** 2 + (y - c) ** 2 + (z - c) ** 2 <= radius ** 2
    return Volume(inside.astype(np.float64))


def random_mask(rng, shape, p=0.3):
    data = (rng.random(shape) < p).astype(np.float64)
    data.flat[0] = 1.0
    data.flat[-1] = 0.0
    return Volume(data)


@pytest.fixture
def rng():
    return commons.make_rng(1234, 0)


@pytest.fixture
def sphere():
    return sphere_mask()
