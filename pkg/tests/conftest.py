import numpy as np
import pytest

from deltaxai.core import TimeSeries, WindowSpec
from deltaxai.datagen import SwitchFeatureConfig, gen_switch_feature, sliding_windows
from deltaxai.models import (
    AffineScorer,
    RecurrentClassifier,
    TrainConfig,
    WindowMLP,
    train_sgd,
)


def random_series(L, D, seed, scale=1.0, series_id="s"):
    rng = np.random.default_rng(seed)
    return TimeSeries(scale * rng.standard_normal((L, D)), np.zeros(L, dtype=int), series_id=series_id)


def central_difference(fn, x, h=1e-4):
    """Gradient of scalar ``fn`` at ``x`` by central differences."""
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (fn(xp) - fn(xm)) / (2 * h)
    return g


@pytest.fixture(scope="session")
def switch_data():
    return gen_switch_feature(SwitchFeatureConfig(num_series=60, seed=11))


@pytest.fixture(scope="session")
def trained_rnn(switch_data):
    """RecurrentClassifier W=12, D=3, H=8 briefly trained on Switch-Feature."""
    X, y = sliding_windows(switch_data[:40], 12)
    model = RecurrentClassifier.init(12, 3, 8, 2, seed=5)
    model, _ = train_sgd(model, (X, y), TrainConfig(learning_rate=0.1, epochs=4, batch_size=32, seed=5))
    return model


@pytest.fixture(scope="session")
def spec12():
    return WindowSpec(12, 2)


@pytest.fixture(scope="session")
def mlp12():
    return WindowMLP.init(12, 3, 10, 2, seed=7)


@pytest.fixture(scope="session")
def affine_identity12():
    return AffineScorer.init(12, 3, 2, seed=3, link="identity")
