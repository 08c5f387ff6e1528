import numpy as np
import pytest

from edsep.sde import SdeParams


@pytest.fixture
def params():
    return SdeParams()


@pytest.fixture
def rng():
    return np.random.default_rng(42)
