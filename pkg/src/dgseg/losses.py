"""Training objectives: segmentation, reconstruction, KL, style-contrastive, consistency.

All functions take channel-first tensors and return scalar tensors that stay
attached to the autograd graph. The style-contrastive loss draws its positive
pairing from a caller-supplied generator so the draw can be replayed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import torch
import torch.nn.functional as F

from .errors import DivergenceError
from .nets import AnatomyRep

DICE_SMOOTH = 1e-5
LOG_CLAMP = 1e-12
COSINE_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    """Trade-off weights for the total objective plus the contrastive temperature."""

    lambda1: float = 1.0     # reconstruction
    lambda2: float = 0.001   # KL
    lambda3: float = 0.01    # style contrast
    lambda4: float = 1.0     # anatomy consistency
    tau: float = 0.1

    def __post_init__(self) -> None:
        for name in ("lambda1", "lambda2", "lambda3", "lambda4"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")


@dataclass
class LossReport:
    """Scalar values of every term for one training step."""

    seg: float
    rec: float
    kl: float
    sct: float
    dis: float
    total: float

    def as_dict(self) -> dict[str, float]:
        return {
            "seg": self.seg, "rec": self.rec, "kl": self.kl,
            "sct": self.sct, "dis": self.dis, "total": self.total,
        }


def _check_labels(probs: torch.Tensor, target: torch.Tensor) -> None:
    k = probs.shape[1]
    if probs.shape[0] != target.shape[0] or probs.shape[2:] != target.shape[1:]:
        raise ValueError(f"probs {tuple(probs.shape)} and target {tuple(target.shape)} disagree")
    if target.numel() and (target.min() < 0 or target.max() >= k):
        raise ValueError(f"target labels must lie in [0, {k}), got range "
                         f"[{int(target.min())}, {int(target.max())}]")


def dice_loss(probs: torch.Tensor, target: torch.Tensor, smooth: float = DICE_SMOOTH) -> torch.Tensor:
    """Soft Dice over classes: 1 - mean of (2*overlap + s) / (pred sum + gt sum + s)."""
    _check_labels(probs, target)
    k = probs.shape[1]
    onehot = F.one_hot(target.long(), num_classes=k).permute(0, 3, 1, 2).to(probs.dtype)
    inter = (probs * onehot).sum(dim=(2, 3))
    denom = probs.sum(dim=(2, 3)) + onehot.sum(dim=(2, 3))
    dice = (2.0 * inter + smooth) / (denom + smooth)
    return 1.0 - dice.mean()


def cross_entropy_loss(probs: torch.Tensor, target: torch.Tensor, clamp: float = LOG_CLAMP) -> torch.Tensor:
    """Mean negative log probability of the true class, probabilities clamped before log."""
    _check_labels(probs, target)
    picked = probs.gather(1, target.long().unsqueeze(1)).squeeze(1)
    return -torch.log(picked.clamp_min(clamp)).mean()


def segmentation_loss(probs: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Hybrid objective: the average of soft Dice and cross-entropy."""
    return 0.5 * (dice_loss(probs, target) + cross_entropy_loss(probs, target))


def reconstruction_loss(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference over every element."""
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    return (x - x_hat).abs().mean()


def kl_loss(mean: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """Closed-form KL from N(mean, exp(logvar)) to the unit Gaussian, per-sample mean."""
    if mean.shape != logvar.shape:
        raise ValueError(f"shape mismatch: {tuple(mean.shape)} vs {tuple(logvar.shape)}")
    if not (torch.isfinite(mean).all() and torch.isfinite(logvar).all()):
        raise ValueError("kl_loss requires finite mean and logvar")
    per_sample = 0.5 * (mean.pow(2) + logvar.exp() - logvar - 1.0).sum(dim=1)
    return per_sample.mean()


def _unit_rows(codes: torch.Tensor) -> torch.Tensor:
    norms = codes.norm(dim=1, keepdim=True).clamp_min(COSINE_FLOOR)
    return codes / norms


def style_contrastive_loss(
    codes: Mapping[int, torch.Tensor],
    tau: float,
    generator: torch.Generator | None = None,
    permutations: Mapping[int, Sequence[int]] | None = None,
) -> torch.Tensor:
    """Pull each style code toward a permuted partner from its own domain and
    away from the batch-aligned codes of every other domain.

    For domain d and index i the positive is cos(code_d[i], code_d[perm_d[i]])
    with perm_d drawn uniformly (fixed points allowed); the negatives are
    cos(code_d[i], code_e[i]) for every other domain e. Terms are scaled by
    1/tau, passed through a softmax cross-entropy against the positive, and
    averaged over all domains and indices.

    ``permutations`` overrides the random draw with explicit index sequences,
    which lets a reference implementation share the exact pairing.
    """
    if tau <= 0:
        raise ValueError("tau must be > 0")
    domain_ids = sorted(codes)
    if len(domain_ids) < 2:
        raise ValueError("style_contrastive_loss needs codes from at least 2 domains")
    b = codes[domain_ids[0]].shape[0]
    if b < 2:
        raise ValueError("style_contrastive_loss needs at least 2 codes per domain")
    for d in domain_ids:
        if codes[d].shape != codes[domain_ids[0]].shape:
            raise ValueError("all domains must contribute equally shaped code batches")

    normed = {d: _unit_rows(codes[d]) for d in domain_ids}
    perms: dict[int, torch.Tensor] = {}
    for d in domain_ids:
        if permutations is not None:
            p = torch.as_tensor(list(permutations[d]), dtype=torch.long)
            if sorted(p.tolist()) != list(range(b)):
                raise ValueError(f"permutations[{d}] is not a permutation of range({b})")
        else:
            p = torch.randperm(b, generator=generator)
        perms[d] = p

    per_domain = []
    for d in domain_ids:
        pos = (normed[d] * normed[d][perms[d]]).sum(dim=1)
        negs = torch.stack(
            [(normed[d] * normed[e]).sum(dim=1) for e in domain_ids if e != d]
        )
        logits = torch.cat([pos.unsqueeze(0), negs], dim=0) / tau
        per_domain.append((torch.logsumexp(logits, dim=0) - pos / tau).mean())
    return torch.stack(per_domain).mean()


def anatomy_consistency_loss(
    rep_a: AnatomyRep | torch.Tensor, rep_b: AnatomyRep | torch.Tensor
) -> torch.Tensor:
    """Mean absolute difference between two anatomy representations.

    Compares the straight-through values, so the term is exactly the L1
    distance of the binarized maps while gradients reach both encoders.
    """
    a = rep_a.hard if isinstance(rep_a, AnatomyRep) else rep_a
    b = rep_b.hard if isinstance(rep_b, AnatomyRep) else rep_b
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().mean()


def total_loss(
    seg: torch.Tensor,
    rec: torch.Tensor,
    kl: torch.Tensor,
    sct: torch.Tensor,
    dis: torch.Tensor,
    weights: LossWeights,
) -> torch.Tensor:
    """Weighted sum of the five terms; raises naming the first non-finite one."""
    parts = {"seg": seg, "rec": rec, "kl": kl, "sct": sct, "dis": dis}
    for name, value in parts.items():
        finite = torch.isfinite(value).all() if isinstance(value, torch.Tensor) else torch.isfinite(
            torch.as_tensor(float(value))
        )
        if not finite:
            raise DivergenceError(f"loss term '{name}' is non-finite")
    return (
        seg
        + weights.lambda1 * rec
        + weights.lambda2 * kl
        + weights.lambda3 * sct
        + weights.lambda4 * dis
    )
