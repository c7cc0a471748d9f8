"""Experiment configuration: flat key=value files assembled into typed configs.

A config file is plain text, one ``key = value`` per line, ``#`` comments and
blank lines ignored. Command-line ``--set key=value`` pairs override file
values. Every key is listed in CONFIG_KEYS; unknown keys are rejected so typos
fail loudly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

from .errors import ConfigError
from .losses import LossWeights
from .nets import NetConfig
from .trainer import TrainConfig


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip())


def _parse_pair(text: str) -> tuple[int, int]:
    parts = _parse_int_tuple(text)
    if len(parts) != 2:
        raise ValueError(f"expected two comma-separated ints, got {text!r}")
    return parts  # type: ignore[return-value]


# key -> (parser, description). The description doubles as documentation.
CONFIG_KEYS: dict[str, tuple[Callable[[str], object], str]] = {
    "net.in_channels": (int, "image channels (default 3)"),
    "net.num_classes": (int, "segmentation classes (default 3)"),
    "net.anatomy_channels": (int, "binarized anatomy channels (default 8)"),
    "net.style_dim": (int, "style code dimension (default 16)"),
    "net.unet_channels": (_parse_int_tuple, "U-Net widths per scale, comma-separated"),
    "net.style_channels": (_parse_int_tuple, "style encoder conv widths, comma-separated"),
    "net.decoder_channels": (_parse_int_tuple, "decoder conv widths, comma-separated"),
    "net.segmenter_width": (int, "segmenter hidden width (default 32)"),
    "net.gumbel_temperature": (float, "binarization relaxation temperature (default 0.5)"),
    "train.epochs": (int, "training epochs (default 200)"),
    "train.lr": (float, "initial Adam learning rate (default 1e-3)"),
    "train.plateau_patience": (int, "non-improving epochs before decay (default 8)"),
    "train.lr_decay_factor": (float, "multiplicative decay (default 0.95)"),
    "train.b": (int, "per-domain mini-batch size (default 8)"),
    "train.variant": (str, "one of base, sct, da, sctda"),
    "train.seed": (int, "master seed for init, noise and data streams"),
    "train.crop": (_parse_pair, "training crop h,w (default 48,48)"),
    "train.augment": (_parse_bool, "enable crop/flip/brightness augmentation"),
    "train.flip": (_parse_bool, "enable random flips"),
    "train.brightness": (float, "brightness jitter amplitude (default 0.05)"),
    "train.detach_original": (_parse_bool, "treat original anatomy as fixed in the consistency term"),
    "loss.lambda1": (float, "reconstruction weight (default 1)"),
    "loss.lambda2": (float, "KL weight (default 0.001)"),
    "loss.lambda3": (float, "style-contrast weight (default 0.01)"),
    "loss.lambda4": (float, "consistency weight (default 1)"),
    "loss.tau": (float, "contrastive temperature (default 0.1)"),
    "data.root": (str, "dataset directory (domain<k>/images+masks layout)"),
    "data.mode": (str, "'synthetic' or 'real'; recorded in manifests"),
    "data.k": (int, "synthetic domain count for gen-data (default 4)"),
    "data.n_per_domain": (int, "synthetic samples per domain for gen-data (default 80)"),
    "data.size": (_parse_pair, "synthetic image size h,w (default 64,64)"),
    "out.dir": (str, "output directory for runs and reports"),
    "target_domain": (int, "held-out domain id for train/eval"),
}


@dataclass
class ExperimentConfig:
    """Everything one experiment needs, with full-scale defaults."""

    net: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data_root: str = "data"
    data_mode: str = "synthetic"
    k: int = 4
    n_per_domain: int = 80
    size: tuple[int, int] = (64, 64)
    out_dir: str = "runs"
    target_domain: int | None = None

    def __post_init__(self) -> None:
        if self.data_mode not in ("synthetic", "real"):
            raise ConfigError(f"data.mode must be 'synthetic' or 'real', got {self.data_mode!r}")


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        values[key] = value
    return values


def parse_config_file(path: Path | str) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(), source=str(path))


def parse_overrides(pairs: list[str]) -> dict[str, str]:
    values: dict[str, str] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = (part.strip() for part in pair.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = value
    return values


def _typed(values: Mapping[str, str]) -> dict[str, object]:
    typed: dict[str, object] = {}
    for key, raw in values.items():
        parser = CONFIG_KEYS[key][0]
        try:
            typed[key] = parser(raw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from exc
    return typed


def build_experiment_config(values: Mapping[str, str]) -> ExperimentConfig:
    """Assemble the typed config from flat string values (already merged)."""
    typed = _typed(values)

    def section(prefix: str) -> dict[str, object]:
        return {
            key.split(".", 1)[1]: value
            for key, value in typed.items()
            if key.startswith(prefix + ".")
        }

    try:
        net = NetConfig(**section("net"))
        weights = LossWeights(**section("loss"))
        train_kwargs = section("train")
        train = TrainConfig(weights=weights, **train_kwargs)
    except (ConfigError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc

    data_kwargs = section("data")
    config = ExperimentConfig(
        net=net,
        train=train,
        data_root=str(data_kwargs.get("root", "data")),
        data_mode=str(data_kwargs.get("mode", "synthetic")),
        k=int(data_kwargs.get("k", 4)),
        n_per_domain=int(data_kwargs.get("n_per_domain", 80)),
        size=data_kwargs.get("size", (64, 64)),
        out_dir=str(typed.get("out.dir", "runs")),
        target_domain=typed.get("target_domain"),
    )
    return config


def describe_keys() -> str:
    width = max(len(k) for k in CONFIG_KEYS)
    return "\n".join(f"{k.ljust(width)}  {desc}" for k, (_, desc) in sorted(CONFIG_KEYS.items()))
