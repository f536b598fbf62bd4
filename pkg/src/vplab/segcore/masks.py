"""Mask logits to binary mask conversion."""

from __future__ import annotations

import torch
import torch.nn.functional as F

from vplab.errors import SlotError
from vplab.segcore.types import BinaryMask, MaskLogits


def binarize(
    ml: MaskLogits, slot: int, threshold: float = 0.0, target_size: tuple[int, int] | None = None
) -> BinaryMask:
    """Bilinearly resize one slot's logits to the target size and threshold."""
    if not (0 <= slot < ml.n_slots):
        raise SlotError(f"slot {slot} out of range [0, {ml.n_slots})")
    logits = ml.logits[slot]
    if target_size is not None and tuple(logits.shape) != tuple(target_size):
        logits = F.interpolate(
            logits[None, None].float(), size=tuple(target_size), mode="bilinear", align_corners=False
        )[0, 0]
    bits = (logits > threshold).detach().cpu().numpy()
    return BinaryMask(bits=bits, threshold_used=threshold)
