"""Mask evaluation metrics."""

from __future__ import annotations

from vplab.errors import ShapeError
from vplab.segcore.types import BinaryMask


def iou(pred: BinaryMask, gt: BinaryMask) -> float:
    """Intersection over union in [0, 1]; empty vs empty counts as 1."""
    if pred.bits.shape != gt.bits.shape:
        raise ShapeError(f"mask sizes differ: {pred.bits.shape} vs {gt.bits.shape}")
    inter = int((pred.bits & gt.bits).sum())
    union = int((pred.bits | gt.bits).sum())
    if union == 0:
        return 1.0
    return inter / union


def evaluate_miou(preds: list[BinaryMask], gts: list[BinaryMask]) -> float:
    """Mean IoU over aligned mask lists, in percent."""
    if len(preds) != len(gts):
        raise ShapeError(f"list lengths differ: {len(preds)} vs {len(gts)}")
    if not preds:
        raise ShapeError("cannot evaluate an empty list")
    return 100.0 * sum(iou(p, g) for p, g in zip(preds, gts)) / len(preds)
