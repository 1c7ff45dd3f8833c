import numpy as np
import pytest
import torch

from facesynth import generate_toy_dataset, scaled_config
from facesynth.model import build_models

torch.set_num_threads(1)


def micro_config(**overrides):
    """Smallest config that still exercises every architecture stage."""
    defaults = dict(image_size=16, num_attributes=4, base_channels=4,
                    downsample_factor=4, num_residual_blocks=2,
                    batch_size=4, total_epochs=2, decay_start_epoch=1, seed=0)
    defaults.update(overrides)
    return scaled_config(**defaults)


@pytest.fixture(scope="session")
def tiny_cfg():
    return micro_config()


@pytest.fixture()
def tiny_models(tiny_cfg):
    return build_models(tiny_cfg.generator, tiny_cfg.discriminator, seed=0)


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    """Small shared toy dataset for unit tests (64 samples, 32x32)."""
    root = tmp_path_factory.mktemp("toy64")
    manifest = generate_toy_dataset(root, 64, num_attributes=4, image_size=32, seed=11)
    return root, manifest


def random_batch(rng, n=2, size=16, num_attributes=4):
    x = torch.from_numpy(rng.uniform(-1, 1, (n, 3, size, size)).astype(np.float32))
    s = torch.from_numpy(rng.uniform(-1, 1, (n, 3, size, size)).astype(np.float32))
    y = np.zeros((n, num_attributes), dtype=np.float32)
    y[np.arange(n), rng.integers(0, num_attributes, n)] = 1.0
    return x, s, torch.from_numpy(y)
