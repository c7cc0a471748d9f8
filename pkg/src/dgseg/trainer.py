"""End-to-end training loop: per-domain batches, the full objective, Adam with
plateau decay, per-step history records, and resumable checkpoints.

Determinism contract: a (config, seed, dataset) triple fixes the entire run.
The seed feeds three separate streams -- parameter init, sampling noise
(binarization, reparameterization, contrastive permutations, mixing weights),
and data selection/augmentation -- so ablation variants that skip a term still
consume identical data and init streams.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from .data import SplitPlan, sample_domain_minibatches
from .domain_mix import domain_augmentation_loss
from .errors import CheckpointMismatchError, ConfigError
from .losses import (
    LossReport,
    LossWeights,
    kl_loss,
    reconstruction_loss,
    segmentation_loss,
    style_contrastive_loss,
    total_loss,
)
from .nets import DisentangleModel, NetConfig, load_checkpoint, save_checkpoint

VARIANTS = ("base", "sct", "da", "sctda")

CHECKPOINT_NAME = "checkpoint.pt"
HISTORY_NAME = "history.jsonl"


@dataclass
class TrainConfig:
    """Optimization recipe; defaults are the full-scale training settings."""

    epochs: int = 200
    lr: float = 1e-3
    plateau_patience: int = 8
    lr_decay_factor: float = 0.95
    b: int = 8
    weights: LossWeights = field(default_factory=LossWeights)
    variant: str = "sctda"
    seed: int = 0
    crop: tuple[int, int] = (48, 48)
    checkpoint_dir: Path | str = "runs/default"
    augment: bool = True
    flip: bool = True
    brightness: float = 0.05
    detach_original: bool = False

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not (0 < self.lr_decay_factor < 1):
            raise ConfigError("lr_decay_factor must be in (0, 1)")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.plateau_patience < 1:
            raise ConfigError("plateau_patience must be >= 1")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.b < 1:
            raise ConfigError("b must be >= 1")
        if self.b < 2 and uses_style_contrast(self.variant):
            raise ConfigError(f"variant {self.variant!r} needs b >= 2 for permutation positives")
        self.crop = (int(self.crop[0]), int(self.crop[1]))

    def to_dict(self, include_paths: bool = True) -> dict:
        d = asdict(self)
        d["crop"] = list(self.crop)
        d["checkpoint_dir"] = str(self.checkpoint_dir)
        if not include_paths:
            del d["checkpoint_dir"]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        kwargs = dict(d)
        if "weights" in kwargs and isinstance(kwargs["weights"], dict):
            kwargs["weights"] = LossWeights(**kwargs["weights"])
        if "crop" in kwargs:
            kwargs["crop"] = tuple(kwargs["crop"])
        kwargs.setdefault("checkpoint_dir", "runs/default")
        return cls(**kwargs)


def uses_style_contrast(variant: str) -> bool:
    return variant in ("sct", "sctda")


def uses_domain_augmentation(variant: str) -> bool:
    return variant in ("da", "sctda")


@dataclass
class TrainState:
    """Progress and scheduler state, persisted for resume."""

    epoch: int = 0
    step: int = 0
    current_lr: float = 0.0
    best_monitor_value: float = math.inf
    epochs_since_improvement: int = 0


def plateau_scheduler(
    monitor_history: list[float], patience: int, factor: float, lr: float
) -> float:
    """Learning rate after replaying the decay rule over a monitor history.

    Each value that fails to strictly improve on the best seen so far counts
    toward the patience; reaching it multiplies the rate by ``factor`` and
    restarts the count, so long histories can decay several times.
    """
    if patience < 1:
        raise ValueError("patience must be >= 1")
    best = math.inf
    since = 0
    out = lr
    for value in monitor_history:
        if value < best:
            best = value
            since = 0
        else:
            since += 1
            if since >= patience:
                out *= factor
                since = 0
    return out


def _seed_streams(seed: int) -> tuple[int, torch.Generator, np.random.Generator]:
    root = np.random.SeedSequence(seed)
    init_ss, noise_ss, data_ss = root.spawn(3)
    init_seed = int(init_ss.generate_state(1, dtype=np.uint64)[0])
    noise_gen = torch.Generator()
    noise_gen.manual_seed(int(noise_ss.generate_state(1, dtype=np.uint64)[0]))
    data_rng = np.random.default_rng(data_ss)
    return init_seed, noise_gen, data_rng


def _batch_tensors(samples) -> tuple[torch.Tensor, torch.Tensor]:
    images = np.stack([s.image for s in samples]).transpose(0, 3, 1, 2)
    masks = np.stack([s.mask for s in samples])
    return torch.from_numpy(images).float(), torch.from_numpy(masks).long()


def train_step(
    model: DisentangleModel,
    optimizer: torch.optim.Optimizer,
    batches: dict[int, list],
    config: TrainConfig,
    noise_gen: torch.Generator,
) -> LossReport:
    """One optimizer update over all source-domain mini-batches.

    Terms disabled by the variant contribute an exact zero and consume no
    randomness, so enabling them never perturbs the shared streams' draws for
    the enabled ones.
    """
    domain_ids = sorted(batches)
    anatomies = {}
    codes = {}
    seg_terms, rec_terms, kl_terms = [], [], []
    for d in domain_ids:
        images, masks = _batch_tensors(batches[d])
        anatomy = model.anatomy_encode(images, generator=noise_gen, train_mode=True)
        style = model.style_encode(images, generator=noise_gen)
        probs = model.segment(anatomy)
        x_hat = model.reconstruct(anatomy, style.z)
        seg_terms.append(segmentation_loss(probs, masks))
        rec_terms.append(reconstruction_loss(images, x_hat))
        kl_terms.append(kl_loss(style.mean, style.logvar))
        anatomies[d] = anatomy
        codes[d] = style.z

    seg = torch.stack(seg_terms).mean()
    rec = torch.stack(rec_terms).mean()
    kl = torch.stack(kl_terms).mean()
    zero = seg.new_zeros(())
    if uses_style_contrast(config.variant):
        sct = style_contrastive_loss(codes, config.weights.tau, generator=noise_gen)
    else:
        sct = zero
    if uses_domain_augmentation(config.variant):
        dis, _ = domain_augmentation_loss(
            model, anatomies, codes,
            generator=noise_gen, detach_original=config.detach_original,
        )
    else:
        dis = zero

    total = total_loss(seg, rec, kl, sct, dis, config.weights)
    optimizer.zero_grad()
    total.backward()
    optimizer.step()
    return LossReport(
        seg=seg.item(), rec=rec.item(), kl=kl.item(),
        sct=sct.item(), dis=dis.item(), total=total.item(),
    )


def steps_per_epoch(split: SplitPlan, b: int) -> int:
    """Enough steps that the largest source domain is seen about once."""
    largest = max(len(split.per_domain_train[d]) for d in split.source_domains)
    return max(1, math.ceil(largest / b))


@dataclass
class TrainResult:
    checkpoint_path: Path
    history_path: Path
    history: list[dict]
    state: TrainState
    model: DisentangleModel


def _checkpoint_extra(config, split, state, optimizer, noise_gen, data_rng):
    return {
        "train_config": config.to_dict(include_paths=False),
        "target_domain": split.target_domain,
        "source_domains": list(split.source_domains),
        "train_state": asdict(state),
        "optimizer_state": optimizer.state_dict(),
        "noise_gen_state": noise_gen.get_state(),
        "data_rng_state": data_rng.bit_generator.state,
    }


def train(
    split: SplitPlan,
    net_config: NetConfig,
    config: TrainConfig,
    resume: bool = False,
) -> TrainResult:
    """Run the full recipe on one leave-one-domain-out split.

    Writes ``checkpoint.pt`` after every epoch and appends one JSON line per
    step to ``history.jsonl``. With ``resume=True`` an existing checkpoint in
    ``config.checkpoint_dir`` restores model, optimizer, scheduler state and
    both random streams, so the continued run is step-for-step identical to
    one that never stopped. A non-finite loss aborts the epoch before the
    checkpoint is rewritten, so the last completed epoch survives divergence.
    """
    ckpt_dir = Path(config.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = ckpt_dir / CHECKPOINT_NAME
    history_path = ckpt_dir / HISTORY_NAME

    init_seed, noise_gen, data_rng = _seed_streams(config.seed)
    torch.manual_seed(init_seed)
    model = DisentangleModel(net_config)
    model.train()
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
    state = TrainState(current_lr=config.lr)
    history: list[dict] = []
    start_epoch = 0

    if resume:
        if not ckpt_path.is_file():
            raise ConfigError(f"resume requested but no checkpoint at {ckpt_path}")
        loaded, extra = load_checkpoint(ckpt_path, expected_config=net_config)
        stored = TrainConfig.from_dict(
            {**extra["train_config"], "checkpoint_dir": str(ckpt_dir)}
        )
        stored_d = stored.to_dict(include_paths=False)
        config_d = config.to_dict(include_paths=False)
        # extending the horizon is the usual reason to resume; everything else
        # shapes the random streams and the objective, so it must match
        stored_d.pop("epochs")
        config_d.pop("epochs")
        if stored_d != config_d:
            raise CheckpointMismatchError(
                "checkpoint was trained under a different train config"
            )
        if extra["target_domain"] != split.target_domain:
            raise CheckpointMismatchError(
                f"checkpoint targets domain {extra['target_domain']}, "
                f"split targets {split.target_domain}"
            )
        model.load_state_dict(loaded.state_dict())
        model.train()
        optimizer.load_state_dict(extra["optimizer_state"])
        noise_gen.set_state(extra["noise_gen_state"])
        data_rng.bit_generator.state = extra["data_rng_state"]
        state = TrainState(**extra["train_state"])
        start_epoch = state.epoch
        if history_path.is_file():
            with open(history_path) as fh:
                history = [json.loads(line) for line in fh if line.strip()]

    n_steps = steps_per_epoch(split, config.b)
    mode = "a" if resume else "w"
    with open(history_path, mode) as hist_fh:
        for epoch in range(start_epoch, config.epochs):
            epoch_totals = []
            for _ in range(n_steps):
                batches = sample_domain_minibatches(
                    split, config.b, data_rng,
                    crop=config.crop, augment=config.augment,
                    flip=config.flip, brightness=config.brightness,
                )
                report = train_step(model, optimizer, batches, config, noise_gen)
                state.step += 1
                record = {
                    "step": state.step,
                    "epoch": epoch,
                    "lr": state.current_lr,
                    **report.as_dict(),
                }
                history.append(record)
                hist_fh.write(json.dumps(record) + "\n")
                epoch_totals.append(report.total)
            hist_fh.flush()

            monitor = float(np.mean(epoch_totals))
            if monitor < state.best_monitor_value:
                state.best_monitor_value = monitor
                state.epochs_since_improvement = 0
            else:
                state.epochs_since_improvement += 1
                if state.epochs_since_improvement >= config.plateau_patience:
                    state.current_lr *= config.lr_decay_factor
                    state.epochs_since_improvement = 0
                    for group in optimizer.param_groups:
                        group["lr"] = state.current_lr

            state.epoch = epoch + 1
            save_checkpoint(
                ckpt_path,
                model,
                extra=_checkpoint_extra(config, split, state, optimizer, noise_gen, data_rng),
            )

    return TrainResult(
        checkpoint_path=ckpt_path,
        history_path=history_path,
        history=history,
        state=state,
        model=model,
    )
