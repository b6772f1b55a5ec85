"""
Test fixtures and configuration for ssb_guard tests
"""
import logging
import tempfile
from pathlib import Path
from typing import Generator

import numpy as np
import pytest

from ssb_guard.config import ModelLayout, ScenarioConfig, TrainConfig
from ssb_guard.features import Hypothesis, Observation


@pytest.fixture
def temp_dir() -> Generator[Path, None, None]:
    """Create a temporary directory for testing"""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


@pytest.fixture(autouse=True)
def reset_root_logger() -> Generator[None, None, None]:
    """Drop handlers added by setup_logging so tests do not leak into each other"""
    yield
    root = logging.getLogger()
    for handler in root.handlers[:]:
        root.removeHandler(handler)


@pytest.fixture
def small_scenario() -> ScenarioConfig:
    """Scenario small enough for unit tests: 512-point FFT, 20 RBs"""
    return ScenarioConfig(
        n_fft=512,
        n_rb=20,
        n_obs_per_class=6,
        sjnr_grid_db=[-10.0, 0.0, 10.0],
        distance_grid_m=[10.0, 50.0],
        modulations=["QPSK"],
        master_seed=7,
    )


@pytest.fixture
def tiny_layout() -> ModelLayout:
    """Three narrow conv blocks that fit a 5 x 16 input"""
    return ModelLayout(
        conv_channels=(2, 2, 2),
        conv_kernels=((2, 3), (2, 3), (1, 2)),
        hidden_units=4,
    )


@pytest.fixture
def fast_train() -> TrainConfig:
    """Short SGDM run"""
    return TrainConfig(
        batch_size=8,
        learning_rate=0.05,
        momentum=0.9,
        max_epochs=10,
        validation_fraction=0.25,
        validation_frequency=5,
        seed=3,
    )


def make_separable(
    n_per_class: int, cols: int = 16, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """
    Toy tensors whose class is readable from the epsilon rows

    H0 rows 3-4 sit near -10, H1 rows near +10; rows 0-2 are noise.
    """
    rng = np.random.default_rng(seed)
    tensors = rng.normal(size=(2 * n_per_class, 5, cols))
    labels = np.array([0, 1] * n_per_class, dtype=np.int64)
    tensors[:, 3:, :] += np.where(labels == 1, 10.0, -10.0)[:, None, None]
    return tensors.astype(np.float32), labels


@pytest.fixture
def separable_data() -> tuple[np.ndarray, np.ndarray]:
    """80 per class separable toy tensors of shape 5 x 16"""
    return make_separable(80)


@pytest.fixture
def toy_observations() -> list[Observation]:
    """Labeled 5 x 16 observations with SJNR values on the jammed ones"""
    tensors, labels = make_separable(20, seed=5)
    sjnr = np.linspace(-10.0, 30.0, 20)
    observations = []
    for i, (tensor, label) in enumerate(zip(tensors, labels)):
        observations.append(
            Observation(
                tensor=tensor.astype(np.float64),
                label=Hypothesis(int(label)),
                sjnr_db=float(sjnr[i // 2]) if label == 1 else None,
                meta={"distance_m": 10.0 + i},
            )
        )
    return observations
