import numpy as np
import pytest

from fraccat.layer1d import projection_constants, solve_layer
from fraccat.reduced_profile import solve_reduced


@pytest.fixture(scope="session")
def profile():
    return solve_layer(0.75)


@pytest.fixture(scope="session")
def constants(profile):
    Cb, Cpm = projection_constants(profile)
    return {"C_bar": Cb, "C_bar_pm": Cpm}


@pytest.fixture(scope="session")
def reduced_solution(constants):
    return solve_reduced(0.75, 1e-3, constants)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
