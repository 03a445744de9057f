import numpy as np
import pytest

from skeletonmap.assembly import default_construction


@pytest.fixture(scope="session")
def desk():
    return default_construction()


@pytest.fixture(scope="session")
def toy():
    return default_construction(m=2, k=2, n=2, r_b=0.12, mode="toy")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
