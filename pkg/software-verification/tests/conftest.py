"""
Test fixtures and utilities for pointseq verification.
"""

import os
import sys

import numpy as np
import pytest
import torch

# Add the repository root to the path so we can import models / controllers
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))))

import matplotlib  # noqa: E402

matplotlib.use("Agg")

from models.config import PRESETS, TrainConfig  # noqa: E402
from models.geometry import PointCloud  # noqa: E402
from models.pipeline import collate, prepare_items  # noqa: E402
from models.shapes import make_dataset  # noqa: E402


@pytest.fixture
def rng():
    """Returns a seeded numpy Generator."""
    return np.random.default_rng(1234)


@pytest.fixture
def random_cloud(rng):
    """Returns a 200-point Gaussian cloud."""
    return PointCloud.from_points(rng.normal(size=(200, 3)))


@pytest.fixture
def toy_config():
    """Returns the toy model config (d_e=8, 1 block, 6 centers, 2 classes, PE on)."""
    return PRESETS["toy"].model


@pytest.fixture
def tiny_dataset(toy_config):
    """Returns a 2-class synthetic dataset with 4 items per class."""
    return make_dataset(toy_config.num_classes, 4, toy_config.n_points, seed=0)


@pytest.fixture
def toy_samples(toy_config, tiny_dataset):
    """Returns (train_samples, test_samples) prepared for the toy config."""
    return prepare_items(tiny_dataset.train(), toy_config), prepare_items(tiny_dataset.test(), toy_config)


@pytest.fixture
def toy_batch(toy_samples):
    """Returns one collated batch of the toy training samples."""
    return collate(toy_samples[0][:4])


@pytest.fixture
def quick_train_config():
    """Returns a 3-epoch training config for the toy model."""
    return TrainConfig(epochs=3, batch_size=2, lr=1e-2, warmup_epochs=1, classes=2, per_class=4)


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


class CloudTestHelper:
    """Helper class for common test operations."""

    @staticmethod
    def is_permutation(order, n):
        return sorted(np.asarray(order).tolist()) == list(range(n))

    @staticmethod
    def pairwise(points):
        points = np.asarray(points)
        return np.linalg.norm(points[:, None, :] - points[None, :, :], axis=-1)


@pytest.fixture
def helper():
    """Returns the CloudTestHelper."""
    return CloudTestHelper
