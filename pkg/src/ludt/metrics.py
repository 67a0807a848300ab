"""One-pass evaluation: distance precision at a pixel threshold and the
success-plot area under curve, plus the results-file format shared with the
tracker (`x,y,w,h` per line, top-left convention)."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .imgproc import BBox

# Success curve sampling: 101 evenly spaced overlap thresholds in [0, 1].
SUCCESS_THRESHOLDS = np.linspace(0.0, 1.0, 101)
DP_THRESHOLD_PX = 20.0


def center_error(pred: BBox, gt: BBox) -> float:
    """Euclidean distance between box centers, in pixels."""
    return float(np.hypot(pred.cx - gt.cx, pred.cy - gt.cy))


def iou(pred: BBox, gt: BBox) -> float:
    """Intersection over union of axis-aligned boxes; disjoint boxes give 0."""
    ax0, ay0, aw, ah = pred.to_tlwh()
    bx0, by0, bw, bh = gt.to_tlwh()
    ix = min(ax0 + aw, bx0 + bw) - max(ax0, bx0)
    iy = min(ay0 + ah, by0 + bh) - max(ay0, by0)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return float(inter / (aw * ah + bw * bh - inter))


def ope_curves(preds: list[BBox], gts: list[BBox]) -> tuple[float, float]:
    """(precision at 20 px, success AUC) over paired frame lists.

    Precision is the fraction of frames whose center error is within the
    threshold; the success curve is sampled at 101 thresholds including both
    endpoints and the AUC is its mean.
    """
    if len(preds) != len(gts):
        raise ValueError(f"length mismatch: {len(preds)} predictions vs {len(gts)} truths")
    if not preds:
        raise ValueError("empty box lists")
    errors = np.array([center_error(p, g) for p, g in zip(preds, gts)])
    overlaps = np.array([iou(p, g) for p, g in zip(preds, gts)])
    precision = float((errors <= DP_THRESHOLD_PX).mean())
    success = (overlaps[None, :] >= SUCCESS_THRESHOLDS[:, None]).mean(axis=1)
    return precision, float(success.mean())


def success_curve(preds: list[BBox], gts: list[BBox]) -> np.ndarray:
    overlaps = np.array([iou(p, g) for p, g in zip(preds, gts)])
    return (overlaps[None, :] >= SUCCESS_THRESHOLDS[:, None]).mean(axis=1)


def ope_by_attribute(
    runs: list[tuple[list[BBox], list[BBox], list[str]]]
) -> dict[str, tuple[float, float]]:
    """Aggregate OPE metrics per scenario tag: frames of all sequences carrying
    a tag are pooled before computing the metrics."""
    pooled: dict[str, tuple[list[BBox], list[BBox]]] = {}
    for preds, gts, tags in runs:
        for tag in tags:
            bucket = pooled.setdefault(tag, ([], []))
            bucket[0].extend(preds)
            bucket[1].extend(gts)
    return {tag: ope_curves(p, g) for tag, (p, g) in sorted(pooled.items())}


def save_boxes(path: str | Path, boxes: list[BBox]) -> None:
    lines = []
    for b in boxes:
        x, y, w, h = b.to_tlwh()
        lines.append(f"{x:.3f},{y:.3f},{w:.3f},{h:.3f}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_boxes(path: str | Path) -> list[BBox]:
    boxes = []
    text = Path(path).read_text()
    for ln, line in enumerate(text.strip().splitlines(), start=1):
        parts = line.replace("\t", ",").replace(" ", ",").split(",")
        parts = [p for p in parts if p]
        if len(parts) != 4:
            raise ValueError(f"{path}:{ln}: expected x,y,w,h, got {line!r}")
        x, y, w, h = (float(p) for p in parts)
        boxes.append(BBox.from_tlwh(x, y, w, h))
    if not boxes:
        raise ValueError(f"no boxes in {path}")
    return boxes


def summary_line(precision: float, auc: float) -> str:
    return f"DP@20={precision:.4f} AUC={auc:.4f}"
