import numpy as np
import pytest

from lbkinetic.grid import TorusGrid, VelocityGrid
from lbkinetic.kernel import build_tables
from lbkinetic.potential import InteractionPotential


@pytest.fixture(scope="session")
def debye():
    return InteractionPotential("debye", amplitude=1.0, screening=1.0, k_max=10.0)


@pytest.fixture(scope="session")
def vel16():
    return VelocityGrid(2, 16, 6.0)


@pytest.fixture(scope="session")
def vel24():
    return VelocityGrid(2, 24, 8.0)


@pytest.fixture(scope="session")
def tables16(vel16, debye):
    return build_tables(vel16, debye, "maxwellian")


@pytest.fixture(scope="session")
def tables24(vel24, debye):
    return build_tables(vel24, debye, "maxwellian")


@pytest.fixture(scope="session")
def homog():
    return TorusGrid(0, 1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
