"""Core data types passed between encoder, matcher, and decoder."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from vplab.errors import InvalidImage, ShapeError


@dataclass
class ImageRGB:
    """H×W×3 float image with values in [0, 1]."""

    pixels: np.ndarray
    id: str = ""

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim != 3 or px.shape[2] != 3:
            raise InvalidImage(f"expected H×W×3 pixels, got shape {px.shape}")
        if px.shape[0] < 32 or px.shape[1] < 32:
            raise InvalidImage(f"image must be at least 32×32, got {px.shape[:2]}")
        if not np.isfinite(px).all():
            raise InvalidImage("image contains non-finite values")
        if px.min() < 0.0 or px.max() > 1.0:
            raise InvalidImage("pixel values must lie in [0, 1]")
        self.pixels = px

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass
class FeatureGrid:
    """h×w grid of d-dimensional patch features produced by an encoder."""

    features: torch.Tensor  # (h, w, d)
    stride: int
    source_image_id: str = ""

    def __post_init__(self):
        if self.features.ndim != 3:
            raise ShapeError(f"features must be (h, w, d), got {tuple(self.features.shape)}")
        if not torch.isfinite(self.features).all():
            raise ShapeError("feature grid contains non-finite values")

    @property
    def h(self) -> int:
        return self.features.shape[0]

    @property
    def w(self) -> int:
        return self.features.shape[1]

    @property
    def d(self) -> int:
        return self.features.shape[2]


@dataclass(frozen=True)
class PointPrompt:
    """A positive or negative click in pixel coordinates."""

    x: float
    y: float
    polarity: str = "positive"  # "positive" | "negative"

    def __post_init__(self):
        if self.polarity not in ("positive", "negative"):
            raise ValueError(f"polarity must be positive|negative, got {self.polarity!r}")


@dataclass(frozen=True)
class DecoderConfig:
    """Two-way mask decoder hyperparameters.

    Defaults mirror the published decoder scale of the segment-anything
    family so parameter budgets are comparable; ``tiny()`` is the fast
    profile used throughout the test suite.
    """

    d: int = 256
    depth: int = 2
    heads: int = 8
    d_down: int = 128
    d_mlp: int = 2048
    n_mask_tokens: int = 4
    upscale: int = 4

    def __post_init__(self):
        if self.d % self.heads != 0:
            raise ShapeError(f"d={self.d} not divisible by heads={self.heads}")
        if self.d_down % self.heads != 0:
            raise ShapeError(f"d_down={self.d_down} not divisible by heads={self.heads}")
        if self.d % 8 != 0:
            raise ShapeError(f"d={self.d} must be divisible by 8 (upscaler channel schedule)")
        if self.d % 4 != 0:
            raise ShapeError(f"d={self.d} must be divisible by 4 (positional encoding)")
        if self.depth < 1:
            raise ShapeError("depth must be >= 1")
        if self.n_mask_tokens < 1:
            raise ShapeError("n_mask_tokens must be >= 1")
        if self.upscale < 1 or (self.upscale & (self.upscale - 1)) != 0:
            raise ShapeError(f"upscale must be a power of two >= 1, got {self.upscale}")

    @classmethod
    def tiny(cls) -> "DecoderConfig":
        return cls(d=32, depth=2, heads=2, d_down=16, d_mlp=64, n_mask_tokens=4, upscale=4)

    def as_dict(self) -> dict:
        return {
            "d": self.d,
            "depth": self.depth,
            "heads": self.heads,
            "d_down": self.d_down,
            "d_mlp": self.d_mlp,
            "n_mask_tokens": self.n_mask_tokens,
            "upscale": self.upscale,
        }


@dataclass
class MaskLogits:
    """Per-slot mask logits plus the decoder's own IoU estimate per slot."""

    logits: torch.Tensor  # (n_mask_tokens, h*upscale, w*upscale)
    iou_pred: torch.Tensor  # (n_mask_tokens,) in [0, 1]

    def __post_init__(self):
        if self.logits.ndim != 3:
            raise ShapeError(f"logits must be (slots, H, W), got {tuple(self.logits.shape)}")
        if self.iou_pred.ndim != 1 or self.iou_pred.shape[0] != self.logits.shape[0]:
            raise ShapeError("iou_pred length must equal the number of mask slots")

    @property
    def n_slots(self) -> int:
        return self.logits.shape[0]

    def best_slot(self) -> int:
        return int(torch.argmax(self.iou_pred).item())


@dataclass
class BinaryMask:
    """Boolean mask aligned with its source image."""

    bits: np.ndarray  # (H, W) bool
    threshold_used: float = 0.0

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2:
            raise ShapeError(f"mask must be (H, W), got shape {bits.shape}")
        self.bits = bits.astype(bool)

    @property
    def area(self) -> int:
        return int(self.bits.sum())

    @property
    def shape(self) -> tuple:
        return self.bits.shape
