import numpy as np
import pytest

from alsed import DatasetSpec, TrainConfig, generate_dataset, train


@pytest.fixture(scope="session")
def small_spec():
    return DatasetSpec(n_files=40, event_ratio=0.25, snr_db=0.0, rng_seed=3)


@pytest.fixture(scope="session")
def small_dataset(small_spec):
    return generate_dataset(small_spec)


@pytest.fixture(scope="session")
def trained_params(small_dataset):
    # few epochs: unit tests only need a plausible model, not a converged one
    cfg = TrainConfig(rng_seed=5, epochs=6)
    return train(small_dataset.train, cfg, n_classes=4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
