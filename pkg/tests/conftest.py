import numpy as np
import pytest

from nnsplitter.data import DatasetSplit, synthetic_split
from nnsplitter.models import train_victim


def tiny_dataset(seed: int = 0, n_train: int = 256, n_eval: int = 128,
                 image_size: int = 8) -> DatasetSplit:
    """Small, easy split for fast unit tests."""
    return synthetic_split(seed, num_train=n_train, num_eval=n_eval,
                           image_size=image_size, noise=0.3, max_shift=1)


@pytest.fixture(scope="session")
def tiny_data():
    return tiny_dataset()


@pytest.fixture(scope="session")
def tiny_victim(tiny_data):
    store, acc = train_victim("tiny_cnn", tiny_data, seed=0, epochs=8, lr=0.05)
    assert acc > 0.5, f"tiny victim failed to train ({acc})"
    return store


@pytest.fixture(scope="session")
def small_victim(tiny_data):
    store, acc = train_victim("small_cnn", tiny_data, seed=0, epochs=8, lr=0.05)
    assert acc > 0.5, f"small victim failed to train ({acc})"
    return store


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
