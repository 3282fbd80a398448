from pathlib import Path

import numpy as np
import pytest

from makeup_transfer.convnet import default_template, random_network
from makeup_transfer.fixtures import make_face_pair
from makeup_transfer.gradcheck import small_network

REPO = Path(__file__).resolve().parents[1]
FIXTURES = REPO / "fixtures"


@pytest.fixture(scope="session")
def net():
    return random_network(default_template(), seed=0)


@pytest.fixture(scope="session")
def small_net():
    return small_network(seed=0)


@pytest.fixture(scope="session")
def pair():
    return make_face_pair(32, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
