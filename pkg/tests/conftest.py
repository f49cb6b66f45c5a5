import numpy as np
import pytest
import torch

from repcycle.body_model import build_toy_template, height_normalize
from repcycle.camera_render import Camera, Palette
from repcycle.datagen import DatagenConfig, default_pose_prior, generate_dataset

torch.manual_seed(0)


@pytest.fixture(scope="session")
def template():
    return build_toy_template(16, 2, 0)


@pytest.fixture(scope="session")
def norm_template(template):
    return height_normalize(template)


@pytest.fixture(scope="session")
def camera():
    return Camera.default(64)


@pytest.fixture(scope="session")
def palette():
    return Palette()


@pytest.fixture(scope="session")
def prior():
    return default_pose_prior(16)


@pytest.fixture(scope="session")
def tiny_dataset():
    cfg = DatagenConfig(n_samples=24, n_sequences=4, resolution=64, seed=0)
    records, template, cam, pal, prior = generate_dataset(cfg)
    return records, template, cam, pal, prior


def centered_translation(template, depth=2.0):
    root_y = float(template.rest_joints[0][1])
    return np.array([0.0, -root_y, depth])
