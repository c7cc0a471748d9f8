"""Evaluation: Dice score, average surface distance, and result tables.

Conventions, frozen here because cross-run comparisons depend on them:

* Predictions argmax to labels; cup = label 2, disc = labels {1, 2}.
* Boundaries are mask pixels with at least one background 4-neighbor, and the
  image border counts as background.
* ASD is the symmetric mean Euclidean distance between boundary pixel sets.
* Degenerate cases: Dice of two empty masks is 100 (flagged); ASD with either
  mask empty is the image diagonal length (flagged).
* Standard deviations are population (ddof=0) over the per-image values.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy.spatial import cKDTree

from .data import SplitPlan
from .errors import DataError

STRUCTURES = ("cup", "disc")


@dataclass
class EvalRow:
    """Aggregated metrics for one (target domain, structure) cell."""

    target_domain: int
    structure: str
    dice_mean: float
    dice_std: float
    asd_mean: float
    asd_std: float
    n_images: int
    degenerate_count: int


@dataclass
class EvalResult:
    """Rows plus the per-image values they were aggregated from."""

    rows: list[EvalRow]
    per_image: list[dict] = field(default_factory=list)


def masks_from_prediction(probs: np.ndarray | torch.Tensor) -> tuple[np.ndarray, np.ndarray]:
    """Argmax a (3, H, W) probability map into (cup, disc) boolean masks."""
    if isinstance(probs, torch.Tensor):
        probs = probs.detach().cpu().numpy()
    if probs.ndim != 3 or probs.shape[0] != 3:
        raise ValueError(f"expected (3, H, W) probabilities, got {probs.shape}")
    labels = probs.argmax(axis=0)
    return labels == 2, labels >= 1


def _as_bool_pair(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return pred, gt


def dice_degenerate(pred: np.ndarray, gt: np.ndarray) -> bool:
    pred, gt = _as_bool_pair(pred, gt)
    return not pred.any() and not gt.any()


def dice_score(pred: np.ndarray, gt: np.ndarray) -> float:
    """Overlap score in percent; two empty masks score 100 by convention."""
    pred, gt = _as_bool_pair(pred, gt)
    total = int(pred.sum()) + int(gt.sum())
    if total == 0:
        return 100.0
    return 100.0 * 2.0 * int((pred & gt).sum()) / total


def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """Mask pixels adjacent (4-connectivity) to background, border included."""
    m = np.asarray(mask).astype(bool)
    padded = np.pad(m, 1, constant_values=False)
    interior = (
        padded[1:-1, :-2] & padded[1:-1, 2:] & padded[:-2, 1:-1] & padded[2:, 1:-1]
    )
    return m & ~interior


def surface_distance_degenerate(pred: np.ndarray, gt: np.ndarray) -> bool:
    pred, gt = _as_bool_pair(pred, gt)
    return not pred.any() or not gt.any()


def average_surface_distance(pred: np.ndarray, gt: np.ndarray) -> float:
    """Symmetric mean distance between boundaries, in pixels.

    If either mask is empty there is no boundary to measure against; the
    image diagonal is returned as a large finite penalty.
    """
    pred, gt = _as_bool_pair(pred, gt)
    if not pred.any() or not gt.any():
        h, w = pred.shape
        return float(math.hypot(h, w))
    pb = np.argwhere(boundary_pixels(pred))
    gb = np.argwhere(boundary_pixels(gt))
    d_pg = cKDTree(gb).query(pb)[0]
    d_gp = cKDTree(pb).query(gb)[0]
    return 0.5 * (float(d_pg.mean()) + float(d_gp.mean()))


def gt_structure_masks(mask: np.ndarray) -> dict[str, np.ndarray]:
    mask = np.asarray(mask)
    return {"cup": mask == 2, "disc": mask >= 1}


def _batched(samples, batch_size):
    by_shape: dict[tuple, list] = {}
    for s in samples:
        by_shape.setdefault(s.image.shape, []).append(s)
    for group in by_shape.values():
        for i in range(0, len(group), batch_size):
            yield group[i : i + batch_size]


def evaluate_split(model, split: SplitPlan, batch_size: int = 8) -> EvalResult:
    """Run deterministic inference on the held-out domain and aggregate metrics."""
    if not split.target_test:
        raise DataError(f"target domain {split.target_domain} has an empty test set")
    per_image: list[dict] = []
    for batch in _batched(split.target_test, batch_size):
        images = torch.from_numpy(
            np.stack([s.image for s in batch]).transpose(0, 3, 1, 2)
        ).float()
        probs = model.predict(images).cpu().numpy()
        for s, p in zip(batch, probs):
            pred_cup, pred_disc = masks_from_prediction(p)
            gt = gt_structure_masks(s.mask)
            pred = {"cup": pred_cup, "disc": pred_disc}
            for structure in STRUCTURES:
                per_image.append(
                    {
                        "target_domain": split.target_domain,
                        "structure": structure,
                        "sample_id": s.sample_id,
                        "dice": dice_score(pred[structure], gt[structure]),
                        "asd": average_surface_distance(pred[structure], gt[structure]),
                        "degenerate": bool(
                            dice_degenerate(pred[structure], gt[structure])
                            or surface_distance_degenerate(pred[structure], gt[structure])
                        ),
                    }
                )
    rows = []
    for structure in STRUCTURES:
        recs = [r for r in per_image if r["structure"] == structure]
        dices = np.array([r["dice"] for r in recs])
        asds = np.array([r["asd"] for r in recs])
        rows.append(
            EvalRow(
                target_domain=split.target_domain,
                structure=structure,
                dice_mean=float(dices.mean()),
                dice_std=float(dices.std()),
                asd_mean=float(asds.mean()),
                asd_std=float(asds.std()),
                n_images=len(recs),
                degenerate_count=sum(r["degenerate"] for r in recs),
            )
        )
    return EvalResult(rows=rows, per_image=per_image)


@dataclass
class Report:
    """All split rows plus the table-style averages."""

    rows: list[EvalRow]
    avg_by_structure: dict[str, dict[str, float]]
    overall: dict[str, float]


def build_report(rows: list[EvalRow]) -> Report:
    """Average the (domain, structure) cells the way the result tables do:
    per-structure means across domains, and an overall mean of every cell."""
    if not rows:
        raise ValueError("build_report needs at least one row")
    avg_by_structure = {}
    for structure in STRUCTURES:
        cells = [r for r in rows if r.structure == structure]
        if cells:
            avg_by_structure[structure] = {
                "dice_mean": float(np.mean([r.dice_mean for r in cells])),
                "asd_mean": float(np.mean([r.asd_mean for r in cells])),
            }
    overall = {
        "dice_mean": float(np.mean([r.dice_mean for r in rows])),
        "asd_mean": float(np.mean([r.asd_mean for r in rows])),
    }
    return Report(rows=list(rows), avg_by_structure=avg_by_structure, overall=overall)


CSV_COLUMNS = (
    "target_domain", "structure", "dice_mean", "dice_std",
    "asd_mean", "asd_std", "n_images", "degenerate_count",
)


def write_csv(rows: list[EvalRow], path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in rows:
            writer.writerow([getattr(r, c) for c in CSV_COLUMNS])


def format_report(report: Report) -> str:
    """Human-readable table: one block per structure, then the averages."""
    lines = []
    for structure in STRUCTURES:
        cells = [r for r in report.rows if r.structure == structure]
        if not cells:
            continue
        lines.append(f"{structure} (Dice % / ASD px)")
        for r in sorted(cells, key=lambda r: r.target_domain):
            lines.append(
                f"  target domain {r.target_domain}: "
                f"{r.dice_mean:6.2f} +/- {r.dice_std:5.2f} / "
                f"{r.asd_mean:6.2f} +/- {r.asd_std:5.2f}  (n={r.n_images}"
                + (f", degenerate={r.degenerate_count}" if r.degenerate_count else "")
                + ")"
            )
        avg = report.avg_by_structure[structure]
        lines.append(f"  avg: {avg['dice_mean']:6.2f} / {avg['asd_mean']:6.2f}")
    lines.append(
        f"overall avg: {report.overall['dice_mean']:6.2f} Dice / "
        f"{report.overall['asd_mean']:6.2f} ASD"
    )
    return "\n".join(lines) + "\n"
