"""End-to-end pseudolabel generation: reference → similarity → prompts → decode."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Optional

import numpy as np

from vplab.errors import NoMatch
from vplab.matcher.reference import ReferenceSet
from vplab.matcher.similarity import sample_points, similarity_map
from vplab.segcore.masks import binarize
from vplab.segcore.model import SegModel
from vplab.segcore.types import BinaryMask, ImageRGB

if TYPE_CHECKING:
    from vplab.peft.state import EPEFTState

STATUS_ORDER = ("predicted", "refined", "validated")


@dataclass
class MatchParams:
    tau: float = 0.5
    k_max: int = 5
    nms_radius: int = 1
    threshold: float = 0.0


@dataclass
class PseudoLabel:
    mask: BinaryMask
    confidence: float
    status: str = "predicted"
    image_id: str = ""


def advance_status(current: str, new: str) -> str:
    """Enforce forward-only predicted → refined → validated transitions."""
    if STATUS_ORDER.index(new) < STATUS_ORDER.index(current):
        raise ValueError(f"status cannot move backward: {current} → {new}")
    return new


def pseudolabel_one(
    model: SegModel,
    peft: Optional["EPEFTState"],
    ref: ReferenceSet,
    target: ImageRGB,
    params: MatchParams,
) -> PseudoLabel:
    grid = model.encode(target)
    sm = similarity_map(ref, grid)
    size = (target.height, target.width)
    try:
        points = sample_points(sm, tau=params.tau, k_max=params.k_max, nms_radius=params.nms_radius)
    except NoMatch:
        empty = BinaryMask(bits=np.zeros(size, dtype=bool), threshold_used=params.threshold)
        return PseudoLabel(mask=empty, confidence=0.0, status="predicted", image_id=target.id)
    ml = model.decode_points(grid, points, size, peft=peft)
    slot = ml.best_slot()
    mask = binarize(ml, slot, threshold=params.threshold, target_size=size)
    confidence = float(ml.iou_pred[slot].item())
    return PseudoLabel(mask=mask, confidence=confidence, status="predicted", image_id=target.id)


def generate_pseudolabels(
    model: SegModel,
    peft: Optional["EPEFTState"],
    ref: ReferenceSet,
    targets: list[ImageRGB],
    params: MatchParams | None = None,
    max_workers: int = 1,
    progress=None,
) -> list[PseudoLabel]:
    """Pseudolabel every target; NoMatch yields an empty mask, never an abort.

    ``max_workers`` > 1 runs targets concurrently against the read-only model
    snapshot; output order always follows input order.
    """
    params = params or MatchParams()
    if not targets:
        return []
    if max_workers <= 1:
        out = []
        for i, t in enumerate(targets):
            out.append(pseudolabel_one(model, peft, ref, t, params))
            if progress is not None:
                progress((i + 1) / len(targets))
        return out
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = [pool.submit(pseudolabel_one, model, peft, ref, t, params) for t in targets]
        out = []
        for i, f in enumerate(futures):
            out.append(f.result())
            if progress is not None:
                progress((i + 1) / len(targets))
        return out
