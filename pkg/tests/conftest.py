import numpy as np
import pytest

from rieszcap.geometry import cantor_spec, ifs_attractor, sample_sphere


@pytest.fixture(scope="session")
def circle_4000():
    return sample_sphere(1, 2, 4000)


@pytest.fixture(scope="session")
def cantor_clouds():
    return {k: ifs_attractor(cantor_spec(), k) for k in (6, 8, 10, 12)}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
