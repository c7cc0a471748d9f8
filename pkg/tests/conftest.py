import numpy as np
import pytest
import torch

from dgseg.nets import DisentangleModel, NetConfig

torch.set_num_threads(1)


def make_tiny_config(**overrides):
    kwargs = dict(
        anatomy_channels=2,
        style_dim=2,
        unet_channels=(2, 4),
        style_channels=(2, 4),
        decoder_channels=(4,),
        segmenter_width=2,
    )
    kwargs.update(overrides)
    return NetConfig(**kwargs)


def make_tiny_model(seed=0, double=False, **overrides):
    torch.manual_seed(seed)
    model = DisentangleModel(make_tiny_config(**overrides))
    if double:
        model.double()
    return model


@pytest.fixture
def tiny_config():
    return make_tiny_config()


@pytest.fixture
def tiny_model():
    return make_tiny_model()


@pytest.fixture
def rng():
    return np.random.default_rng(0)
