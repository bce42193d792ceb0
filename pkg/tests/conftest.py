import numpy as np
import pytest

from litetrack.config import ModelConfig, variant_config
from litetrack.weights import init_weights


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_b4():
    config = variant_config("B4", toy=True)
    return config, init_weights(config, seed=3)


@pytest.fixture(scope="session")
def toy_b6():
    config = variant_config("B6", toy=True)
    return config, init_weights(config, seed=5)


@pytest.fixture(scope="session")
def odd_grid_config():
    # 5x5 search grid, so the Hann window has a single peak at the crop center
    return ModelConfig(embed_dim=64, num_heads=4, mlp_ratio=2, patch_size=8,
                       template_size=(24, 24), search_size=(40, 40), fe_layers=1, ai_layers=1)
