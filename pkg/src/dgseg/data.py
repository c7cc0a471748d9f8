"""Multi-domain segmentation data: synthetic generation, disk I/O, augmentation, splits.

Masks use a 3-class encoding: 0 = background, 1 = disc rim, 2 = cup. The full
disc region is recovered as ``mask >= 1`` so that cup-inside-disc nesting needs
no multi-label encoding.

On-disk layout (written by :func:`save_dataset`, read by
:func:`load_multisite_dataset`)::

    <root>/domain<k>/images/<id>.png   8-bit RGB, values scaled from [0, 1]
    <root>/domain<k>/masks/<id>.png    8-bit single channel, values in {0, 1, 2}
    <root>/manifest.json               generation parameters, when synthetic
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import DataError

MASK_LABELS = (0, 1, 2)
BACKGROUND, DISC_RIM, CUP = MASK_LABELS


@dataclass
class ImageSample:
    """One image with its segmentation mask and source-domain label."""

    image: np.ndarray  # H x W x C float32 in [0, 1]
    mask: np.ndarray   # H x W uint8 with values in {0, 1, 2}
    domain_id: int
    sample_id: str


@dataclass(frozen=True)
class DomainStyleSpec:
    """Appearance parameters that define one synthetic domain.

    Styles act on the rendered image only, never on the mask. The transform
    order is gamma, per-channel tint, additive bias, Gaussian blur, Gaussian
    noise, then a clamp back to [0, 1].
    """

    intensity_bias: float = 0.0
    gamma: float = 1.0
    channel_tint: tuple[float, ...] = (1.0, 1.0, 1.0)
    noise_sigma: float = 0.0
    blur_radius: float = 0.0

    def __post_init__(self) -> None:
        if self.gamma <= 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.blur_radius < 0:
            raise ValueError(f"blur_radius must be >= 0, got {self.blur_radius}")
        if any(t < 0 for t in self.channel_tint):
            raise ValueError("channel_tint entries must be non-negative")


IDENTITY_SPEC = DomainStyleSpec()


@dataclass
class SplitPlan:
    """One leave-one-domain-out split: train on sources, test on the target."""

    target_domain: int
    source_domains: list[int]
    per_domain_train: dict[int, list[ImageSample]]
    target_test: list[ImageSample]


def _sample_rngs(seed: int, index: int) -> tuple[np.random.Generator, np.random.Generator]:
    # Geometry and style consume independent streams so that style parameters
    # can never perturb the mask drawn for a given (seed, index).
    geom = np.random.default_rng(np.random.SeedSequence([seed, index, 0]))
    style = np.random.default_rng(np.random.SeedSequence([seed, index, 1]))
    return geom, style


def _smooth_field(rng: np.random.Generator, shape: tuple[int, int], cells: int, amplitude: float) -> np.ndarray:
    coarse = rng.uniform(-1.0, 1.0, size=(cells, cells))
    zy = shape[0] / cells
    zx = shape[1] / cells
    smooth = ndimage.zoom(coarse, (zy, zx), order=3, mode="nearest", grid_mode=True)
    return amplitude * smooth[: shape[0], : shape[1]]


def _draw_strokes(img: np.ndarray, rng: np.random.Generator, n_strokes: int, depth: float) -> None:
    """Darken a few random polyline strokes in place (vessel-like clutter)."""
    h, w = img.shape[:2]
    for _ in range(n_strokes):
        y0, x0 = rng.uniform(0, h), rng.uniform(0, w)
        ang = rng.uniform(0, 2 * np.pi)
        length = rng.uniform(0.4, 1.0) * max(h, w)
        curve = rng.uniform(-0.8, 0.8)
        t = np.linspace(0.0, 1.0, int(2 * length))
        ys = y0 + t * length * np.sin(ang) + curve * length * 0.25 * np.sin(np.pi * t)
        xs = x0 + t * length * np.cos(ang) + curve * length * 0.25 * np.cos(np.pi * t)
        ys = np.clip(np.round(ys).astype(int), 0, h - 1)
        xs = np.clip(np.round(xs).astype(int), 0, w - 1)
        img[ys, xs] -= depth
        img[np.clip(ys + 1, 0, h - 1), xs] -= depth * 0.5


def _render_geometry(rng: np.random.Generator, size: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Render one unstyled sample: textured background, disc ellipse, nested cup."""
    h, w = size
    scale = min(h, w)

    ax = rng.uniform(0.15, 0.21) * scale
    ay = rng.uniform(0.15, 0.21) * scale
    cx = rng.uniform(ax + 2.0, w - ax - 2.0)
    cy = rng.uniform(ay + 2.0, h - ay - 2.0)

    cup_scale = rng.uniform(0.45, 0.62)
    cax = cup_scale * ax
    cay = cup_scale * ay
    # Keep the jitter well inside the annulus so the cup stays strictly interior.
    jx = rng.uniform(-0.35, 0.35) * (ax - cax)
    jy = rng.uniform(-0.35, 0.35) * (ay - cay)

    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    r_disc = np.sqrt(((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2)
    r_cup = np.sqrt(((xx - cx - jx) / cax) ** 2 + ((yy - cy - jy) / cay) ** 2)

    mask = np.zeros((h, w), dtype=np.uint8)
    mask[r_disc <= 1.0] = DISC_RIM
    mask[r_cup <= 1.0] = CUP

    base = rng.uniform(0.28, 0.40)
    img = base + _smooth_field(rng, (h, w), cells=5, amplitude=0.07)
    img += rng.normal(0.0, 0.012, size=(h, w))
    _draw_strokes(img, rng, n_strokes=int(rng.integers(2, 5)), depth=0.10)

    disc_level = rng.uniform(0.58, 0.68)
    cup_level = rng.uniform(0.78, 0.88)
    edge = scale / 45.0
    alpha_disc = np.clip((1.0 - r_disc) * min(ax, ay) / edge, 0.0, 1.0)
    alpha_cup = np.clip((1.0 - r_cup) * min(cax, cay) / edge, 0.0, 1.0)
    img = img * (1.0 - alpha_disc) + disc_level * alpha_disc
    img = img * (1.0 - alpha_cup) + cup_level * alpha_cup

    content_tint = 1.0 + rng.uniform(-0.04, 0.04, size=3)
    rgb = np.clip(img[..., None] * content_tint[None, None, :], 0.0, 1.0)
    return rgb.astype(np.float32), mask


def apply_style(image: np.ndarray, spec: DomainStyleSpec, rng: np.random.Generator) -> np.ndarray:
    """Apply a domain style to an image in [0, 1]; result is clamped to [0, 1]."""
    if len(spec.channel_tint) != image.shape[-1]:
        raise ValueError(
            f"channel_tint has {len(spec.channel_tint)} entries for a "
            f"{image.shape[-1]}-channel image"
        )
    x = image.astype(np.float64)
    x = np.power(np.clip(x, 0.0, 1.0), spec.gamma)
    x = x * np.asarray(spec.channel_tint)[None, None, :]
    x = x + spec.intensity_bias
    if spec.blur_radius > 0:
        x = ndimage.gaussian_filter(x, sigma=(spec.blur_radius, spec.blur_radius, 0.0))
    if spec.noise_sigma > 0:
        x = x + rng.normal(0.0, spec.noise_sigma, size=x.shape)
    return np.clip(x, 0.0, 1.0).astype(np.float32)


def _check_geometry(mask: np.ndarray) -> None:
    disc_region = mask >= DISC_RIM
    cup_region = mask == CUP
    if not cup_region.any():
        raise DataError("degenerate geometry: empty cup region")
    interior = ndimage.binary_erosion(disc_region)
    if not np.all(interior[cup_region]):
        raise DataError("degenerate geometry: cup touches or leaves the disc boundary")


def generate_synthetic_domain(
    spec: DomainStyleSpec,
    n: int,
    size: tuple[int, int],
    seed: int,
    domain_id: int = 0,
    id_prefix: str = "s",
) -> list[ImageSample]:
    """Generate ``n`` styled samples with nested cup/disc ellipse geometry.

    Deterministic: the same arguments produce bit-identical samples, and the
    mask for a given (seed, index) does not depend on ``spec``.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    h, w = size
    if h < 32 or w < 32:
        raise ValueError(f"size must be at least 32x32, got {size}")
    samples = []
    for i in range(n):
        geom_rng, style_rng = _sample_rngs(seed, i)
        raw, mask = _render_geometry(geom_rng, (h, w))
        _check_geometry(mask)
        image = apply_style(raw, spec, style_rng)
        samples.append(
            ImageSample(image=image, mask=mask, domain_id=domain_id, sample_id=f"{id_prefix}{i:04d}")
        )
    return samples


def domain_seed(seed: int, domain_id: int) -> int:
    """Per-domain generation seed, so domains share statistics but not samples."""
    return int(np.random.SeedSequence([seed, domain_id]).generate_state(1, dtype=np.uint64)[0])


def generate_multidomain_dataset(
    specs: list[DomainStyleSpec],
    n: int,
    size: tuple[int, int],
    seed: int,
) -> dict[int, list[ImageSample]]:
    """Generate one domain per style spec, each with its own geometry draw."""
    return {
        i: generate_synthetic_domain(
            spec, n, size, seed=domain_seed(seed, i), domain_id=i, id_prefix=f"d{i}_"
        )
        for i, spec in enumerate(specs)
    }


def default_domain_specs(k: int) -> list[DomainStyleSpec]:
    """Deterministic palette of ``k`` visually distinct domain styles.

    The first styles form a cluster of related appearances while the last
    entries drift progressively further away, which makes the final domain a
    natural held-out target for generalization experiments.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    base = [
        DomainStyleSpec(intensity_bias=-0.05, gamma=1.50, channel_tint=(1.05, 0.85, 0.70),
                        noise_sigma=0.015, blur_radius=0.0),
        DomainStyleSpec(intensity_bias=0.00, gamma=1.15, channel_tint=(1.00, 0.95, 0.80),
                        noise_sigma=0.020, blur_radius=0.4),
        DomainStyleSpec(intensity_bias=0.03, gamma=0.95, channel_tint=(0.97, 0.93, 0.88),
                        noise_sigma=0.015, blur_radius=0.0),
        DomainStyleSpec(intensity_bias=0.05, gamma=0.75, channel_tint=(0.88, 0.95, 1.04),
                        noise_sigma=0.025, blur_radius=0.6),
        DomainStyleSpec(intensity_bias=-0.12, gamma=2.20, channel_tint=(1.20, 0.75, 0.95),
                        noise_sigma=0.025, blur_radius=0.0),
        DomainStyleSpec(intensity_bias=0.06, gamma=0.70, channel_tint=(0.85, 1.10, 0.75),
                        noise_sigma=0.020, blur_radius=1.2),
    ]
    specs = []
    for i in range(k):
        if i < len(base):
            specs.append(base[i])
        else:
            # Extend deterministically by perturbing the palette.
            src = base[i % len(base)]
            shift = 0.02 * (1 + i // len(base))
            specs.append(
                DomainStyleSpec(
                    intensity_bias=src.intensity_bias + shift,
                    gamma=src.gamma * (1.0 + shift),
                    channel_tint=tuple(t * (1.0 - shift) for t in src.channel_tint),
                    noise_sigma=src.noise_sigma,
                    blur_radius=src.blur_radius,
                )
            )
    return specs


# ---------------------------------------------------------------------------
# Disk I/O


def save_dataset(
    root: Path | str,
    samples_by_domain: Mapping[int, list[ImageSample]],
    manifest: dict | None = None,
) -> None:
    """Write samples in the domain<k>/images+masks layout, plus a manifest."""
    root = Path(root)
    for domain_id, samples in sorted(samples_by_domain.items()):
        img_dir = root / f"domain{domain_id}" / "images"
        msk_dir = root / f"domain{domain_id}" / "masks"
        img_dir.mkdir(parents=True, exist_ok=True)
        msk_dir.mkdir(parents=True, exist_ok=True)
        for s in samples:
            arr = np.clip(np.round(s.image * 255.0), 0, 255).astype(np.uint8)
            Image.fromarray(arr).save(img_dir / f"{s.sample_id}.png")
            Image.fromarray(s.mask.astype(np.uint8), mode="L").save(msk_dir / f"{s.sample_id}.png")
    if manifest is not None:
        (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def list_domain_ids(root: Path | str) -> list[int]:
    """Domain ids present under ``root``, read from directory names only."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root is not a directory: {root}")
    ids = []
    for child in sorted(root.iterdir()):
        m = re.fullmatch(r"domain(\d+)", child.name)
        if child.is_dir() and m:
            ids.append(int(m.group(1)))
    if not ids:
        raise DataError(f"no domain<k> directories found under {root}")
    return ids


def load_multisite_dataset(
    root: Path | str,
    only_domains: Iterable[int] | None = None,
    access_log: list[Path] | None = None,
) -> dict[int, list[ImageSample]]:
    """Load image/mask pairs grouped by domain.

    ``only_domains`` restricts which domain directories are opened at all;
    ``access_log``, when given, records every file path this call reads. Both
    exist so that training can prove it never touched the held-out domain.
    """
    root = Path(root)
    wanted = set(only_domains) if only_domains is not None else None
    dataset: dict[int, list[ImageSample]] = {}
    for domain_id in list_domain_ids(root):
        if wanted is not None and domain_id not in wanted:
            continue
        img_dir = root / f"domain{domain_id}" / "images"
        msk_dir = root / f"domain{domain_id}" / "masks"
        if not img_dir.is_dir():
            raise DataError(f"domain {domain_id} has no images directory: {img_dir}")
        image_paths = sorted(img_dir.glob("*.png"))
        if not image_paths:
            raise DataError(f"domain {domain_id} is empty: no images in {img_dir}")
        samples = []
        for img_path in image_paths:
            msk_path = msk_dir / img_path.name
            if not msk_path.is_file():
                raise DataError(f"missing mask for image {img_path}")
            if access_log is not None:
                access_log.append(img_path)
                access_log.append(msk_path)
            image = np.asarray(Image.open(img_path).convert("RGB"), dtype=np.float32) / 255.0
            mask = np.asarray(Image.open(msk_path).convert("L"), dtype=np.uint8)
            bad = {int(v) for v in np.unique(mask)} - set(MASK_LABELS)
            if bad:
                raise DataError(f"unknown label value(s) {sorted(bad)} in mask {msk_path}")
            samples.append(
                ImageSample(image=image, mask=mask, domain_id=domain_id, sample_id=img_path.stem)
            )
        dataset[domain_id] = samples
    if wanted is not None:
        missing = wanted - set(dataset)
        if missing:
            raise DataError(f"requested domain(s) {sorted(missing)} not found under {root}")
    return dataset


# ---------------------------------------------------------------------------
# Splits and batching


def make_leave_one_out_splits(
    dataset: Mapping[int, list[ImageSample]] | Iterable[tuple[int, list[ImageSample]]],
) -> list[SplitPlan]:
    """One split per domain: that domain becomes the test target, the rest train."""
    if isinstance(dataset, Mapping):
        items = list(dataset.items())
    else:
        items = list(dataset)
        ids = [d for d, _ in items]
        if len(ids) != len(set(ids)):
            raise DataError("duplicate domain ids in dataset")
    by_id = dict(items)
    if len(by_id) < 2:
        raise DataError(f"leave-one-domain-out needs at least 2 domains, got {len(by_id)}")
    plans = []
    for target in sorted(by_id):
        sources = [d for d in sorted(by_id) if d != target]
        plans.append(
            SplitPlan(
                target_domain=target,
                source_domains=sources,
                per_domain_train={d: by_id[d] for d in sources},
                target_test=list(by_id[target]),
            )
        )
    return plans


def center_crop(sample: ImageSample, crop: tuple[int, int]) -> ImageSample:
    h, w = crop
    H, W = sample.mask.shape
    if h > H or w > W:
        raise ValueError(f"crop {crop} larger than image {(H, W)}")
    oy, ox = (H - h) // 2, (W - w) // 2
    return ImageSample(
        image=sample.image[oy : oy + h, ox : ox + w].copy(),
        mask=sample.mask[oy : oy + h, ox : ox + w].copy(),
        domain_id=sample.domain_id,
        sample_id=sample.sample_id,
    )


def augment_basic(
    sample: ImageSample,
    crop: tuple[int, int],
    rng: np.random.Generator,
    flip: bool = True,
    brightness: float = 0.05,
) -> ImageSample:
    """Random crop, optional horizontal/vertical flips, mild brightness jitter.

    The same geometric transform is applied to image and mask; the jitter
    touches the image only, so mask labels are preserved.
    """
    h, w = crop
    H, W = sample.mask.shape
    if h > H or w > W:
        raise ValueError(f"crop {crop} larger than image {(H, W)}")
    oy = int(rng.integers(0, H - h + 1))
    ox = int(rng.integers(0, W - w + 1))
    image = sample.image[oy : oy + h, ox : ox + w]
    mask = sample.mask[oy : oy + h, ox : ox + w]
    if flip:
        if rng.random() < 0.5:
            image = image[:, ::-1]
            mask = mask[:, ::-1]
        if rng.random() < 0.5:
            image = image[::-1, :]
            mask = mask[::-1, :]
    image = np.ascontiguousarray(image, dtype=np.float32)
    mask = np.ascontiguousarray(mask)
    if brightness > 0:
        factor = 1.0 + rng.uniform(-brightness, brightness)
        image = np.clip(image * factor, 0.0, 1.0).astype(np.float32)
    return ImageSample(image=image, mask=mask.copy(), domain_id=sample.domain_id, sample_id=sample.sample_id)


def sample_domain_minibatches(
    split: SplitPlan,
    b: int,
    rng: np.random.Generator,
    crop: tuple[int, int] | None = None,
    augment: bool = True,
    flip: bool = True,
    brightness: float = 0.05,
) -> dict[int, list[ImageSample]]:
    """Draw ``b`` samples from every source domain, all cropped to a common size.

    Domains with fewer than ``b`` samples are drawn with replacement so the
    per-domain batch shape stays fixed.
    """
    if b < 1:
        raise ValueError("b must be >= 1")
    if crop is None:
        hs = [s.mask.shape[0] for d in split.source_domains for s in split.per_domain_train[d]]
        ws = [s.mask.shape[1] for d in split.source_domains for s in split.per_domain_train[d]]
        crop = (min(hs), min(ws))
    batches: dict[int, list[ImageSample]] = {}
    for d in sorted(split.source_domains):
        pool = split.per_domain_train[d]
        if not pool:
            raise DataError(f"source domain {d} has no training samples")
        idx = rng.choice(len(pool), size=b, replace=len(pool) < b)
        if augment:
            batch = [augment_basic(pool[i], crop, rng, flip=flip, brightness=brightness) for i in idx]
        else:
            batch = [center_crop(pool[i], crop) for i in idx]
        batches[d] = batch
    return batches


def dataset_manifest(
    seed: int,
    size: tuple[int, int],
    n_per_domain: int,
    specs: list[DomainStyleSpec],
) -> dict:
    return {
        "data_mode": "synthetic",
        "seed": seed,
        "size": list(size),
        "n_per_domain": n_per_domain,
        "domains": [{"domain_id": i, **asdict(s)} for i, s in enumerate(specs)],
    }
