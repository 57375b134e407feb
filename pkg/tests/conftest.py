import numpy as np
import pytest

from swtcast.data import impute, resample, split
from swtcast.models import ModelConfig
from swtcast.pipeline import TrainConfig, fit
from swtcast.synthetic import household_load

TINY_TRANSFORMER = ModelConfig(model_dim=16, heads=2, ff_dim=32, encoder_blocks=1, dense_units=16, lookback=14)


@pytest.fixture(scope="session")
def minutely():
    return impute(household_load(seed=0))


@pytest.fixture(scope="session")
def daily_split(minutely):
    return split(resample(minutely, "daily"))


@pytest.fixture(scope="session")
def weekly_split(minutely):
    return split(resample(minutely, "weekly"))


@pytest.fixture(scope="session")
def tiny_daily_fit(daily_split):
    train, _ = daily_split
    return fit(train, TINY_TRANSFORMER, TrainConfig(epochs=6, horizon=3, fine_tune_epochs=1, fine_tune_stages=2))


@pytest.fixture
def rng():
    return np.random.default_rng(0)
