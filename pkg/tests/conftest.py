import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")
REPO = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def data_dir():
    """IDX data root: $BNNOOD_DATA_DIR or <repo>/data (see scripts/npm_json_to_idx.py)."""
    return os.environ.get("BNNOOD_DATA_DIR", os.path.join(REPO, "data"))


def have_mnist():
    d = data_dir()
    return all(os.path.exists(os.path.join(d, sub, f)) for sub, f in (
        ("mnist", "train-images-idx3-ubyte"), ("mnist", "t10k-images-idx3-ubyte"),
        ("fashion", "t10k-images-idx3-ubyte")))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
