import numpy as np
import pytest

from ncs.scenario import RadioConfig, reference_scenario

DESK = RadioConfig().desk_scale()


@pytest.fixture(scope="session")
def fd_scenario():
    return reference_scenario("FD")


@pytest.fixture(scope="session")
def hd_scenario():
    return reference_scenario("HD")


@pytest.fixture(scope="session")
def fd_desk():
    return reference_scenario("FD", radio=DESK)


@pytest.fixture(scope="session")
def hd_desk():
    return reference_scenario("HD", radio=DESK)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
