"""Style-mixing domain augmentation.

Per-domain style codes are combined with random weights in [-1, 1] into a
simulated style, decoded against each domain's own anatomy, and re-encoded;
the L1 gap between original and re-encoded anatomy is the consistency term
that trains the encoder to ignore the synthetic appearance shift.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import torch

from .losses import anatomy_consistency_loss
from .nets import AnatomyRep


@dataclass
class MixWeights:
    """One weight per domain, each in [-1, 1], ordered by sorted domain id."""

    alpha: torch.Tensor

    def __post_init__(self) -> None:
        if self.alpha.ndim != 1:
            raise ValueError("alpha must be a 1-D tensor")
        if self.alpha.numel() and self.alpha.abs().max() > 1.0:
            raise ValueError("mixing weights must lie in [-1, 1]")


def sample_mixing_weights(k: int, generator: torch.Generator | None = None) -> MixWeights:
    """Draw k i.i.d. weights uniformly from [-1, 1]."""
    if k < 1:
        raise ValueError("k must be >= 1")
    alpha = torch.empty(k).uniform_(-1.0, 1.0, generator=generator)
    return MixWeights(alpha=alpha)


def mix_style_codes(
    codes: Mapping[int, torch.Tensor], weights: MixWeights | torch.Tensor
) -> torch.Tensor:
    """Weighted sum of per-domain code batches, aligned by batch index.

    Row i of the result mixes the i-th code of every domain; domains are
    consumed in sorted-id order, matching the weight vector's order.
    """
    alpha = weights.alpha if isinstance(weights, MixWeights) else weights
    domain_ids = sorted(codes)
    if len(domain_ids) != alpha.numel():
        raise ValueError(f"{alpha.numel()} weights for {len(domain_ids)} domains")
    shape = codes[domain_ids[0]].shape
    for d in domain_ids:
        if codes[d].shape != shape:
            raise ValueError("all code batches must share one shape")
    stacked = torch.stack([codes[d] for d in domain_ids])
    return (alpha[:, None, None].to(stacked.dtype) * stacked).sum(dim=0)


def synthesize_mixed_domain(
    anatomy: AnatomyRep, mixed_style: torch.Tensor, decoder
) -> torch.Tensor:
    """Decode a simulated-domain image from real anatomy and a mixed style."""
    return decoder(anatomy.hard, mixed_style)


def consistency_pass(
    x_tilde: torch.Tensor,
    anatomy_orig: AnatomyRep,
    model,
    generator: torch.Generator | None = None,
    train_mode: bool = True,
    detach_original: bool = False,
) -> torch.Tensor:
    """Re-encode a simulated image and measure anatomy drift.

    ``model`` is anything exposing ``anatomy_encode(images, generator=...,
    train_mode=...)``. With ``detach_original`` the original representation is
    treated as a fixed target, so only the re-encoding path receives gradient.
    """
    rep = model.anatomy_encode(x_tilde, generator=generator, train_mode=train_mode)
    orig = anatomy_orig.hard.detach() if detach_original else anatomy_orig.hard
    return anatomy_consistency_loss(orig, rep.hard)


def domain_augmentation_loss(
    model,
    anatomies: Mapping[int, AnatomyRep],
    codes: Mapping[int, torch.Tensor],
    weights: MixWeights | None = None,
    generator: torch.Generator | None = None,
    detach_original: bool = False,
) -> tuple[torch.Tensor, MixWeights]:
    """Full augmentation step: draw weights, mix styles, decode and re-encode
    per domain, and average the consistency losses.

    Returns the scalar loss and the weights actually used so callers can log
    or replay the draw.
    """
    domain_ids = sorted(anatomies)
    if sorted(codes) != domain_ids:
        raise ValueError("anatomies and codes must cover the same domains")
    if weights is None:
        weights = sample_mixing_weights(len(domain_ids), generator=generator)
    mixed = mix_style_codes(codes, weights)
    losses = []
    for d in domain_ids:
        x_tilde = synthesize_mixed_domain(anatomies[d], mixed, model.decoder)
        losses.append(
            consistency_pass(
                x_tilde,
                anatomies[d],
                model,
                generator=generator,
                detach_original=detach_original,
            )
        )
    return torch.stack(losses).mean(), weights
