import numpy as np
import pytest

from geometry import unit_circle
from mesh import build_hierarchy


@pytest.fixture(scope="session")
def circle():
    return unit_circle()


@pytest.fixture(scope="session")
def hierarchy(circle):
    """6-fan seed with four refinements"""
    return build_hierarchy(6, 4, circle)


@pytest.fixture(scope="session")
def seed_mesh(hierarchy):
    return hierarchy.levels[0]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_spd(rng, n, shift=1.0):
    Q = rng.standard_normal((n, n))
    return Q @ Q.T / n + shift * np.eye(n)
