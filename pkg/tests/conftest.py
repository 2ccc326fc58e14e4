import numpy as np
import pytest
from hypothesis import settings

from handrefine.hand_model import toy_model

settings.register_profile("ci", max_examples=25, deadline=None)
settings.load_profile("ci")


@pytest.fixture(scope="session")
def model():
    return toy_model(42, 3)


@pytest.fixture(scope="session")
def small_model():
    return toy_model(7, 2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rotation(axis, angle):
    from handrefine.hand_model import rodrigues

    axis = np.asarray(axis, dtype=np.float64)
    return rodrigues(axis / np.linalg.norm(axis) * angle)
