import numpy as np
import pytest

from qsopt.shbasis import BasisSpec
from qsopt.sphere import electrostatic_protocol


@pytest.fixture(scope="session")
def full_protocol():
    """Well-spread 90-direction protocol shared across the suite."""
    return electrostatic_protocol(90, iterations=3000, seed=0)


@pytest.fixture(scope="session")
def spec_l4():
    return BasisSpec(4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
