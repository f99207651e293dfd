import numpy as np
import pytest

from clip_sidecar.models import load_tower
from clip_sidecar.service import LossService


@pytest.fixture(scope="session")
def tower():
    """One model for the whole session; pretrained when a cache exists."""
    return load_tower("auto")


@pytest.fixture
def service(tower):
    return LossService(tower)


@pytest.fixture
def rng():
    return np.random.default_rng(99)
