import pytest
import torch

from dgseg.errors import CheckpointMismatchError, ConfigError
from dgseg.nets import (
    AnatomyEncoder,
    NetConfig,
    gumbel_binarize,
    load_checkpoint,
    save_checkpoint,
)

from conftest import make_tiny_config, make_tiny_model


def test_config_validation():
    with pytest.raises(ConfigError):
        NetConfig(anatomy_channels=1)
    with pytest.raises(ConfigError):
        NetConfig(style_dim=0)
    with pytest.raises(ConfigError):
        NetConfig(gumbel_temperature=0.0)
    with pytest.raises(ConfigError):
        NetConfig(unet_channels=(16, 16, 32))
    with pytest.raises(ConfigError):
        NetConfig(unet_channels=(32, 16))
    with pytest.raises(ConfigError):
        NetConfig(decoder_channels=())


def test_config_defaults_and_roundtrip():
    config = NetConfig()
    assert config.anatomy_channels == 8
    assert config.style_dim == 16
    assert config.unet_channels == (16, 32, 64, 128, 256)
    assert config.gumbel_temperature == 0.5
    assert config.spatial_divisor == 16
    assert NetConfig.from_dict(config.to_dict()) == config


# --- gumbel binarization ------------------------------------------------


def test_binarize_is_one_hot():
    gen = torch.Generator().manual_seed(0)
    logits = torch.randn(2, 8, 6, 6, generator=gen)
    rep = gumbel_binarize(logits, 0.5, generator=gen)
    hard = rep.hard.detach()
    assert set(hard.unique().tolist()) <= {0.0, 1.0}
    assert torch.all(hard.sum(dim=1) == 1.0)
    assert float((rep.soft.sum(dim=1) - 1.0).abs().max()) < 1e-5


def test_binarize_dominant_logit_wins():
    logits = torch.zeros(1, 4, 2, 2)
    logits[:, 2] = 1e6
    rep = gumbel_binarize(logits, 1.0, generator=torch.Generator().manual_seed(1))
    assert torch.all(rep.hard.detach()[:, 2] == 1.0)


def test_binarize_frequency_matches_softmax():
    gen = torch.Generator().manual_seed(7)
    base = torch.tensor([0.5, -0.3, 1.1, 0.0])
    logits = base.view(1, 4, 1, 1).expand(100_000, 4, 1, 1)
    rep = gumbel_binarize(logits, 1.0, generator=gen)
    freqs = rep.hard.detach().mean(dim=(0, 2, 3))
    expected = torch.softmax(base, dim=0)
    assert float((freqs - expected).abs().max()) < 0.02


def test_binarize_low_temperature_sharpens():
    gen = torch.Generator().manual_seed(3)
    logits = torch.randn(2, 6, 4, 4, generator=gen)
    rep = gumbel_binarize(logits, 1e-3, generator=torch.Generator().manual_seed(5))
    assert float(rep.soft.max(dim=1).values.min()) > 0.999


def test_binarize_rejects_bad_temperature():
    with pytest.raises(ValueError):
        gumbel_binarize(torch.zeros(1, 2, 2, 2), 0.0)


def test_binarize_eval_mode_is_plain_argmax():
    logits = torch.randn(2, 5, 4, 4, generator=torch.Generator().manual_seed(9))
    rep1 = gumbel_binarize(logits, 0.5, train_mode=False)
    rep2 = gumbel_binarize(logits, 0.5, train_mode=False)
    assert torch.equal(rep1.hard, rep2.hard)
    assert torch.equal(rep1.hard.argmax(dim=1), logits.argmax(dim=1))


def test_straight_through_gradients_match_soft_path():
    torch.manual_seed(0)
    logits_a = torch.randn(1, 4, 3, 3, requires_grad=True)
    logits_b = logits_a.detach().clone().requires_grad_(True)
    projection = torch.randn(1, 4, 3, 3)

    rep_a = gumbel_binarize(logits_a, 0.5, generator=torch.Generator().manual_seed(11))
    (rep_a.hard * projection).sum().backward()

    rep_b = gumbel_binarize(logits_b, 0.5, generator=torch.Generator().manual_seed(11))
    (rep_b.soft * projection).sum().backward()

    assert torch.equal(logits_a.grad, logits_b.grad)


# --- components ---------------------------------------------------------


def test_anatomy_encoder_shapes_and_divisibility(tiny_model):
    images = torch.rand(2, 3, 8, 8)
    rep = tiny_model.anatomy_encode(images, generator=torch.Generator().manual_seed(0))
    assert rep.hard.shape == (2, 2, 8, 8)
    assert torch.all(rep.hard.detach().sum(dim=1) == 1.0)
    with pytest.raises(ValueError):
        tiny_model.anatomy_encode(torch.rand(2, 3, 9, 8))


def test_anatomy_encoder_default_depth_needs_divisible_by_16():
    torch.manual_seed(0)
    encoder = AnatomyEncoder(NetConfig())
    with pytest.raises(ValueError):
        encoder(torch.rand(1, 3, 56, 56))
    out = encoder(torch.rand(1, 3, 64, 64))
    assert out.shape == (1, 8, 64, 64)


def test_anatomy_eval_mode_is_deterministic(tiny_model):
    tiny_model.eval()
    images = torch.rand(2, 3, 8, 8, generator=torch.Generator().manual_seed(4))
    rep1 = tiny_model.anatomy_encode(images, train_mode=False)
    rep2 = tiny_model.anatomy_encode(images, train_mode=False)
    assert torch.equal(rep1.hard, rep2.hard)


def test_style_encoder_shapes_and_reparameterization(tiny_model):
    images = torch.rand(4, 3, 8, 8)
    style = tiny_model.style_encode(images, generator=torch.Generator().manual_seed(21))
    assert style.mean.shape == (4, 2)
    assert style.logvar.shape == (4, 2)
    assert style.z.shape == (4, 2)

    # replaying the same generator seed reproduces the exact epsilon draw
    eps = torch.empty(4, 2).normal_(generator=torch.Generator().manual_seed(21))
    expected = style.mean + torch.exp(0.5 * style.logvar) * eps
    assert torch.allclose(style.z, expected, atol=0, rtol=0)


def test_style_noise_only_in_sampling(tiny_model):
    images = torch.rand(4, 3, 8, 8)
    s1 = tiny_model.style_encode(images, generator=torch.Generator().manual_seed(1))
    s2 = tiny_model.style_encode(images, generator=torch.Generator().manual_seed(2))
    assert torch.equal(s1.mean, s2.mean)
    assert torch.equal(s1.logvar, s2.logvar)
    assert not torch.equal(s1.z, s2.z)


def test_decoder_range_determinism_and_batch_check(tiny_model):
    gen = torch.Generator().manual_seed(2)
    rep = tiny_model.anatomy_encode(torch.rand(2, 3, 8, 8, generator=gen), generator=gen)
    z = torch.randn(2, 2, generator=gen)
    tiny_model.eval()
    out1 = tiny_model.reconstruct(rep, z).detach()
    out2 = tiny_model.reconstruct(rep, z).detach()
    assert out1.shape == (2, 3, 8, 8)
    assert float(out1.min()) >= 0.0 and float(out1.max()) <= 1.0
    assert torch.equal(out1, out2)
    with pytest.raises(ValueError):
        tiny_model.reconstruct(rep, torch.randn(3, 2))


def test_segmenter_outputs_probabilities(tiny_model):
    gen = torch.Generator().manual_seed(5)
    rep = tiny_model.anatomy_encode(torch.rand(2, 3, 8, 8, generator=gen), generator=gen)
    probs = tiny_model.segment(rep).detach()
    assert probs.shape == (2, 3, 8, 8)
    assert float((probs.sum(dim=1) - 1.0).abs().max()) < 1e-5


def test_predict_restores_training_flag(tiny_model):
    tiny_model.train()
    images = torch.rand(2, 3, 8, 8)
    p1 = tiny_model.predict(images)
    assert tiny_model.training
    p2 = tiny_model.predict(images)
    assert torch.equal(p1, p2)


# --- checkpoints --------------------------------------------------------


def test_checkpoint_roundtrip(tmp_path):
    model = make_tiny_model(seed=3)
    path = tmp_path / "model.pt"
    save_checkpoint(path, model, extra={"target_domain": 2, "note": "x"})
    loaded, extra = load_checkpoint(path)
    assert extra["target_domain"] == 2
    assert loaded.config == model.config
    for a, b in zip(model.state_dict().values(), loaded.state_dict().values()):
        assert torch.equal(a, b)


def test_checkpoint_config_mismatch(tmp_path):
    model = make_tiny_model()
    path = tmp_path / "model.pt"
    save_checkpoint(path, model)
    with pytest.raises(CheckpointMismatchError):
        load_checkpoint(path, expected_config=make_tiny_config(anatomy_channels=3))
    load_checkpoint(path, expected_config=make_tiny_config())


def test_checkpoint_rejects_unknown_format(tmp_path):
    path = tmp_path / "model.pt"
    torch.save({"format_version": 99}, path)
    with pytest.raises(CheckpointMismatchError):
        load_checkpoint(path)


def test_checkpoint_bytes_deterministic(tmp_path):
    # same basename required: the archive format embeds the file's stem
    model = make_tiny_model(seed=7)
    a = tmp_path / "run_a" / "model.pt"
    b = tmp_path / "run_b" / "model.pt"
    save_checkpoint(a, model, extra={"k": 1})
    save_checkpoint(b, model, extra={"k": 1})
    assert a.read_bytes() == b.read_bytes()
