import numpy as np
import pytest

from ddetc.config import noise_bound, rng_for
from ddetc.datarep import build_theta_bar_s, build_theta_s, example1_schedule, generate_data
from ddetc.sysmodel import example1_plant, make_selector_basis

K_EX1 = np.array([[-3.75, -11.5]])


def example1_data(wbar, seed=0):
    sysm = example1_plant()
    data = generate_data(sysm, example1_schedule(), wbar, rng_for(seed))
    nb = noise_bound(wbar, data.X.shape[1], sysm.n_w)
    return sysm, data, nb, build_theta_s(data, nb, sysm.Bw), build_theta_bar_s(data, nb, sysm.B, sysm.Bw)


@pytest.fixture(scope="session")
def ex1_w01():
    return example1_data(0.01)


@pytest.fixture(scope="session")
def ex1_w005():
    return example1_data(0.005)


@pytest.fixture(scope="session")
def ex1_w05():
    return example1_data(0.05)


@pytest.fixture(scope="session")
def basis2():
    return make_selector_basis(2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
