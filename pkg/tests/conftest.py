"""
Shared fixtures.

The trained-model fixtures are session scoped. trained_ddpm and
trained_baseline use reduced budgets, default_ddpm and default_baseline the
default configuration; every test that requests them is marked slow.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from app.diffusion import linear_schedule  # noqa: E402
from app.neuralnet import init_weights  # noqa: E402
from app.pipelines import train_ddpm_on_constellation, train_dnn_baseline  # noqa: E402
from app.schemas import (  # noqa: E402
    BaselineConfig,
    DenoiserConfig,
    ScheduleConfig,
    TrainingConfig,
)

FIXTURE_SEED = 11

SMALL_DENOISER = DenoiserConfig(hidden_width=64, hidden_layers=3, embed_dim=32)
SMALL_TRAINING = TrainingConfig(order=16, n_samples=48_000, batch_size=256, epochs=20)
SMALL_BASELINE = BaselineConfig(order=16, n_samples=60_000, epochs=12, hidden_width=64)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def schedule():
    return linear_schedule(100)


@pytest.fixture
def conditioned_net():
    """2 -> 8 -> 8 -> 2 Softplus network with a 4-wide time conditioning."""
    return init_weights([2, 8, 8, 2], seed=7, embed_dim=4)


@pytest.fixture(scope="session")
def trained_ddpm():
    """16-QAM DDPM trained on a reduced budget, with its loss trace."""
    return train_ddpm_on_constellation(
        16, ScheduleConfig(), SMALL_DENOISER, SMALL_TRAINING, FIXTURE_SEED
    )


@pytest.fixture(scope="session")
def trained_baseline():
    """16-QAM DNN demapper trained on a reduced budget, with its loss trace."""
    return train_dnn_baseline(SMALL_BASELINE, FIXTURE_SEED)


@pytest.fixture(scope="session")
def default_ddpm():
    """16-QAM DDPM trained with the default configuration."""
    return train_ddpm_on_constellation(
        16, ScheduleConfig(), DenoiserConfig(), TrainingConfig(), FIXTURE_SEED
    )


@pytest.fixture(scope="session")
def default_baseline():
    """16-QAM DNN demapper trained with the default configuration."""
    return train_dnn_baseline(BaselineConfig(), FIXTURE_SEED)


@pytest.fixture
def out_dir(tmp_path: Path) -> Path:
    path = tmp_path / "run"
    path.mkdir()
    return path
