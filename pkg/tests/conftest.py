import numpy as np
import pytest

from cssdf.robot import builtin_robot, planar_arm
from cssdf.geometry import oracle_self_distance


@pytest.fixture(scope="session")
def planar2():
    return builtin_robot("planar2")


@pytest.fixture(scope="session")
def planar3():
    return builtin_robot("planar3")


@pytest.fixture(scope="session")
def spatial7():
    return builtin_robot("spatial7")


@pytest.fixture(scope="session")
def unit_arm():
    """Two unit links with 0.1 m spheres, matching the workspace-bound example."""
    return planar_arm((1.0, 1.0), radius=0.1)


@pytest.fixture(scope="session")
def self_grid_101(planar2):
    return oracle_self_distance(planar2, resolution=101)


@pytest.fixture(scope="session")
def self_grid_201(planar2):
    return oracle_self_distance(planar2, resolution=201)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
