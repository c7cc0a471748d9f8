"""Network components for anatomy/style disentanglement.

Four learnable pieces share one config:

* a U-Net anatomy encoder whose logits are binarized per pixel with a
  gumbel-softmax straight-through estimator,
* a VAE-style encoder producing a Gaussian style code per image,
* a decoder that reconstructs the image from anatomy plus a tiled style code,
* a small convolutional segmenter reading the anatomy only.

Tensors are channel-first (B, C, H, W) throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, CheckpointMismatchError

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class NetConfig:
    """Shape and architecture parameters shared by all four components."""

    in_channels: int = 3
    num_classes: int = 3
    anatomy_channels: int = 8
    style_dim: int = 16
    unet_channels: tuple[int, ...] = (16, 32, 64, 128, 256)
    style_channels: tuple[int, ...] = (16, 32, 64, 128)
    decoder_channels: tuple[int, ...] = (64, 64, 32, 16)
    segmenter_width: int = 32
    gumbel_temperature: float = 0.5

    def __post_init__(self) -> None:
        if self.anatomy_channels < 2:
            raise ConfigError("anatomy_channels must be >= 2")
        if self.style_dim < 1:
            raise ConfigError("style_dim must be >= 1")
        if self.gumbel_temperature <= 0:
            raise ConfigError("gumbel_temperature must be > 0")
        for name in ("unet_channels", "style_channels", "decoder_channels"):
            chans = getattr(self, name)
            if not chans or any(c < 1 for c in chans):
                raise ConfigError(f"{name} must be a non-empty tuple of positive ints")
        if list(self.unet_channels) != sorted(set(self.unet_channels)):
            raise ConfigError("unet_channels must be strictly increasing")
        object.__setattr__(self, "unet_channels", tuple(self.unet_channels))
        object.__setattr__(self, "style_channels", tuple(self.style_channels))
        object.__setattr__(self, "decoder_channels", tuple(self.decoder_channels))

    @property
    def spatial_divisor(self) -> int:
        """Input H and W must be divisible by this (one factor 2 per downsampling)."""
        return 2 ** (len(self.unet_channels) - 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("unet_channels", "style_channels", "decoder_channels"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        kwargs = dict(d)
        for key in ("unet_channels", "style_channels", "decoder_channels"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


@dataclass
class AnatomyRep:
    """Binarized anatomy representation.

    ``hard`` carries one-hot values in the forward pass but routes gradients
    through ``soft`` (straight-through); ``soft`` is the underlying
    gumbel-softmax relaxation.
    """

    hard: torch.Tensor  # B x T x H x W, values in {0, 1}
    soft: torch.Tensor  # B x T x H x W, rows sum to 1 over T


@dataclass
class StyleCode:
    """Gaussian style posterior for a batch, with one reparameterized sample."""

    mean: torch.Tensor    # B x Z
    logvar: torch.Tensor  # B x Z
    z: torch.Tensor       # B x Z


def _sample_gumbel(shape, generator, dtype, device):
    u = torch.rand(shape, generator=generator, dtype=dtype, device=device)
    return -torch.log(-torch.log(u.clamp_min(1e-20)))


def gumbel_binarize(
    logits: torch.Tensor,
    temperature: float,
    generator: torch.Generator | None = None,
    train_mode: bool = True,
) -> AnatomyRep:
    """Per-pixel categorical binarization over the channel axis.

    In train mode each pixel draws Gumbel noise and relaxes with the given
    temperature; evaluation skips the noise so the hard output is the plain
    argmax of the logits and repeat calls agree exactly.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    if train_mode:
        noise = _sample_gumbel(logits.shape, generator, logits.dtype, logits.device)
        soft = F.softmax((logits + noise) / temperature, dim=1)
    else:
        soft = F.softmax(logits / temperature, dim=1)
    index = soft.argmax(dim=1)
    hard = F.one_hot(index, num_classes=logits.shape[1])
    hard = hard.permute(0, 3, 1, 2).to(logits.dtype)
    straight_through = hard - soft.detach() + soft
    return AnatomyRep(hard=straight_through, soft=soft)


class _ConvBlock(nn.Module):
    """Two 3x3 conv + BN + ReLU stages at a fixed width."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(in_ch, out_ch, 3, padding=1, bias=False),
            nn.BatchNorm2d(out_ch),
            nn.ReLU(inplace=True),
            nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False),
            nn.BatchNorm2d(out_ch),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        return self.block(x)


class AnatomyEncoder(nn.Module):
    """U-Net producing per-pixel channel logits at input resolution."""

    def __init__(self, config: NetConfig):
        super().__init__()
        self.config = config
        chans = config.unet_channels
        self.inc = _ConvBlock(config.in_channels, chans[0])
        self.downs = nn.ModuleList(
            _ConvBlock(chans[i], chans[i + 1]) for i in range(len(chans) - 1)
        )
        self.pool = nn.MaxPool2d(2)
        self.up_reduce = nn.ModuleList(
            nn.Conv2d(chans[i + 1], chans[i], 1) for i in reversed(range(len(chans) - 1))
        )
        self.up_convs = nn.ModuleList(
            _ConvBlock(2 * chans[i], chans[i]) for i in reversed(range(len(chans) - 1))
        )
        self.head = nn.Conv2d(chans[0], config.anatomy_channels, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h, w = x.shape[-2:]
        div = self.config.spatial_divisor
        if h % div or w % div:
            raise ValueError(
                f"input spatial size {h}x{w} must be divisible by {div} "
                f"({len(self.config.unet_channels)}-scale encoder)"
            )
        feats = [self.inc(x)]
        for down in self.downs:
            feats.append(down(self.pool(feats[-1])))
        y = feats[-1]
        for reduce, conv, skip in zip(self.up_reduce, self.up_convs, reversed(feats[:-1])):
            y = F.interpolate(y, scale_factor=2, mode="bilinear", align_corners=False)
            y = conv(torch.cat([reduce(y), skip], dim=1))
        return self.head(y)


class StyleEncoder(nn.Module):
    """Strided conv trunk, global pooling, and parallel mean/logvar heads."""

    def __init__(self, config: NetConfig):
        super().__init__()
        self.config = config
        layers = []
        prev = config.in_channels
        for ch in config.style_channels:
            layers += [
                nn.Conv2d(prev, ch, 3, stride=2, padding=1, bias=False),
                nn.BatchNorm2d(ch),
                nn.LeakyReLU(0.2, inplace=True),
            ]
            prev = ch
        self.trunk = nn.Sequential(*layers)
        self.fc_mean = nn.Linear(prev, config.style_dim)
        self.fc_logvar = nn.Linear(prev, config.style_dim)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        feats = self.trunk(x).mean(dim=(2, 3))
        return self.fc_mean(feats), self.fc_logvar(feats)


class ReconstructionDecoder(nn.Module):
    """Rebuilds the image from anatomy channels plus a spatially tiled style code."""

    def __init__(self, config: NetConfig):
        super().__init__()
        self.config = config
        layers = []
        prev = config.anatomy_channels + config.style_dim
        for ch in config.decoder_channels:
            layers += [
                nn.Conv2d(prev, ch, 3, padding=1, bias=False),
                nn.BatchNorm2d(ch),
                nn.LeakyReLU(0.2, inplace=True),
            ]
            prev = ch
        layers.append(nn.Conv2d(prev, config.in_channels, 1))
        self.net = nn.Sequential(*layers)

    def forward(self, anatomy: torch.Tensor, style_z: torch.Tensor) -> torch.Tensor:
        if anatomy.shape[0] != style_z.shape[0]:
            raise ValueError(
                f"batch mismatch: anatomy has {anatomy.shape[0]} samples, "
                f"style has {style_z.shape[0]}"
            )
        b, _, h, w = anatomy.shape
        tiled = style_z[:, :, None, None].expand(b, style_z.shape[1], h, w)
        return torch.sigmoid(self.net(torch.cat([anatomy, tiled], dim=1)))


class Segmenter(nn.Module):
    """Two conv blocks (3x3 then 1x1) and a softmax output head over classes."""

    def __init__(self, config: NetConfig):
        super().__init__()
        self.config = config
        w = config.segmenter_width
        self.net = nn.Sequential(
            nn.Conv2d(config.anatomy_channels, w, 3, padding=1, bias=False),
            nn.BatchNorm2d(w),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(w, w, 1, bias=False),
            nn.BatchNorm2d(w),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(w, config.num_classes, 1),
        )

    def forward(self, anatomy: torch.Tensor) -> torch.Tensor:
        return F.softmax(self.net(anatomy), dim=1)


class DisentangleModel(nn.Module):
    """Bundle of the four components with the typed operations between them."""

    def __init__(self, config: NetConfig):
        super().__init__()
        self.config = config
        self.anatomy_encoder = AnatomyEncoder(config)
        self.style_encoder = StyleEncoder(config)
        self.decoder = ReconstructionDecoder(config)
        self.segmenter = Segmenter(config)

    def anatomy_encode(
        self,
        images: torch.Tensor,
        generator: torch.Generator | None = None,
        train_mode: bool = True,
    ) -> AnatomyRep:
        logits = self.anatomy_encoder(images)
        return gumbel_binarize(
            logits, self.config.gumbel_temperature, generator=generator, train_mode=train_mode
        )

    def style_encode(
        self, images: torch.Tensor, generator: torch.Generator | None = None
    ) -> StyleCode:
        mean, logvar = self.style_encoder(images)
        eps = torch.empty_like(mean).normal_(generator=generator)
        z = mean + torch.exp(0.5 * logvar) * eps
        return StyleCode(mean=mean, logvar=logvar, z=z)

    def reconstruct(self, anatomy: AnatomyRep, style_z: torch.Tensor) -> torch.Tensor:
        return self.decoder(anatomy.hard, style_z)

    def segment(self, anatomy: AnatomyRep) -> torch.Tensor:
        return self.segmenter(anatomy.hard)

    def predict(self, images: torch.Tensor) -> torch.Tensor:
        """Deterministic eval-mode pipeline: image to class probabilities."""
        was_training = self.training
        self.eval()
        try:
            with torch.no_grad():
                anatomy = self.anatomy_encode(images, train_mode=False)
                probs = self.segment(anatomy)
        finally:
            if was_training:
                self.train()
        return probs


def save_checkpoint(
    path: Path | str,
    model: DisentangleModel,
    extra: dict | None = None,
) -> None:
    """Write parameters plus the config needed to rebuild the model."""
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "net_config": model.config.to_dict(),
        "state_dict": model.state_dict(),
        "extra": extra or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(
    path: Path | str,
    expected_config: NetConfig | None = None,
) -> tuple[DisentangleModel, dict]:
    """Rebuild a model from a checkpoint; returns (model, extra payload)."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointMismatchError(
            f"checkpoint format {version!r} not supported (expected {CHECKPOINT_FORMAT_VERSION})"
        )
    config = NetConfig.from_dict(payload["net_config"])
    if expected_config is not None and config != expected_config:
        raise CheckpointMismatchError(
            "checkpoint was written with a different network configuration: "
            f"stored {config}, expected {expected_config}"
        )
    model = DisentangleModel(config)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload.get("extra", {})
