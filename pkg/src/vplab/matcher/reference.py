"""Reference feature sets built from a validated mask."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from vplab.errors import EmptyReference, ShapeError
from vplab.segcore.types import BinaryMask, FeatureGrid

COVERAGE_THRESHOLD = 0.5  # fraction of a cell's pixels that must be masked


@dataclass
class ReferenceSet:
    """L2-normalized feature vectors sampled under the reference mask."""

    vectors: torch.Tensor  # (n, d), unit rows
    centroid: torch.Tensor  # (d,), unit
    source: str = ""

    def __post_init__(self):
        if self.vectors.ndim != 2 or self.vectors.shape[0] == 0:
            raise ShapeError("reference vectors must be a non-empty (n, d) matrix")

    @property
    def d(self) -> int:
        return self.vectors.shape[1]


def mask_cell_coverage(mask: BinaryMask, grid: FeatureGrid) -> np.ndarray:
    """Per-cell fraction of masked pixels, shape (h, w)."""
    h, w, s = grid.h, grid.w, grid.stride
    bits = mask.bits
    if bits.shape != (h * s, w * s):
        raise ShapeError(
            f"mask {bits.shape} does not align with grid {h}×{w} at stride {s}"
        )
    return bits.reshape(h, s, w, s).mean(axis=(1, 3))


def build_reference(grid: FeatureGrid, mask: BinaryMask, source: str = "") -> ReferenceSet:
    """Collect normalized feature vectors from cells the mask mostly covers."""
    coverage = mask_cell_coverage(mask, grid)
    rows, cols = np.nonzero(coverage >= COVERAGE_THRESHOLD)
    if len(rows) == 0:
        raise EmptyReference("mask covers no feature cell at the coverage threshold")
    vecs = grid.features[rows, cols].to(torch.float32)
    norms = vecs.norm(dim=1, keepdim=True)
    keep = norms.squeeze(1) > 1e-12
    if not keep.any():
        raise EmptyReference("all covered cells have zero feature vectors")
    vecs = vecs[keep] / norms[keep]
    mean = vecs.mean(dim=0)
    centroid = mean / mean.norm().clamp_min(1e-12)
    return ReferenceSet(vectors=vecs, centroid=centroid, source=source)
