"""Segmentation training losses: focal + smoothed dice on sigmoid probabilities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from vplab.segcore.types import BinaryMask


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 12
    lr: float = 1e-3
    batch_size: int = 4
    lambda_focal: float = 1.0
    lambda_dice: float = 1.0
    focal_gamma: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.lambda_focal < 0 or self.lambda_dice < 0:
            raise ValueError("loss weights must be non-negative")
        if self.lambda_focal == 0 and self.lambda_dice == 0:
            raise ValueError("at least one loss weight must be positive")


def mask_to_logit_grid(gt: BinaryMask, shape: tuple[int, int], dtype=torch.float32) -> torch.Tensor:
    """Nearest-neighbor resample of a ground-truth mask onto the logit grid."""
    bits = torch.from_numpy(gt.bits.astype(np.float32))
    if tuple(bits.shape) != tuple(shape):
        bits = F.interpolate(bits[None, None], size=tuple(shape), mode="nearest")[0, 0]
    return bits.to(dtype)


def focal_loss(logits: torch.Tensor, target: torch.Tensor, gamma: float) -> torch.Tensor:
    ce = F.binary_cross_entropy_with_logits(logits, target, reduction="none")
    p = torch.sigmoid(logits)
    p_t = p * target + (1 - p) * (1 - target)
    return ((1 - p_t) ** gamma * ce).mean()


def dice_loss(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    p = torch.sigmoid(logits)
    inter = (p * target).sum()
    return 1.0 - (2.0 * inter + 1.0) / (p.sum() + target.sum() + 1.0)


def segmentation_loss(logits: torch.Tensor, gt: BinaryMask, cfg: TrainConfig) -> torch.Tensor:
    """Weighted focal + dice for one mask slot's logits."""
    target = mask_to_logit_grid(gt, tuple(logits.shape), dtype=logits.dtype)
    loss = logits.new_zeros(())
    if cfg.lambda_focal > 0:
        loss = loss + cfg.lambda_focal * focal_loss(logits, target, cfg.focal_gamma)
    if cfg.lambda_dice > 0:
        loss = loss + cfg.lambda_dice * dice_loss(logits, target)
    return loss
