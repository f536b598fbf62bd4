"""Cosine similarity maps and greedy prompt sampling."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from vplab.errors import NoMatch, ShapeError
from vplab.matcher.reference import ReferenceSet
from vplab.segcore.types import FeatureGrid, PointPrompt


@dataclass
class SimilarityMap:
    """Per-cell best cosine similarity against the reference set."""

    values: torch.Tensor  # (h, w) in [-1, 1]
    stride: int

    @property
    def h(self) -> int:
        return self.values.shape[0]

    @property
    def w(self) -> int:
        return self.values.shape[1]


def similarity_map(ref: ReferenceSet, target: FeatureGrid) -> SimilarityMap:
    """Max cosine similarity of each target cell to any reference vector.

    Zero-norm target cells score 0 (they match nothing).
    """
    if target.d != ref.d:
        raise ShapeError(f"feature width mismatch: target {target.d} vs reference {ref.d}")
    feats = target.features.reshape(-1, target.d).to(torch.float32)
    norms = feats.norm(dim=1, keepdim=True)
    unit = feats / norms.clamp_min(1e-12)
    sims = unit @ ref.vectors.t()  # (hw, n_ref)
    best = sims.max(dim=1).values
    best = torch.where(norms.squeeze(1) > 1e-12, best, torch.zeros_like(best))
    return SimilarityMap(values=best.reshape(target.h, target.w), stride=target.stride)


def sample_points(
    sm: SimilarityMap, tau: float = 0.5, k_max: int = 5, nms_radius: int = 1
) -> list[PointPrompt]:
    """Greedy descending-score cell selection with Chebyshev suppression.

    Ties break by (row, col). Selected cell centers become positive point
    prompts in pixel coordinates. Raises NoMatch when nothing clears tau.
    """
    if not (0.0 < tau < 1.0):
        raise ValueError(f"tau must be in (0, 1), got {tau}")
    values = sm.values
    h, w = values.shape
    candidates = [
        (-float(values[r, c]), r, c)
        for r in range(h)
        for c in range(w)
        if float(values[r, c]) >= tau
    ]
    if not candidates:
        raise NoMatch(f"no similarity cell reached tau={tau}")
    candidates.sort()
    suppressed = torch.zeros(h, w, dtype=torch.bool)
    picked: list[tuple[int, int]] = []
    for _, r, c in candidates:
        if len(picked) >= k_max:
            break
        if suppressed[r, c]:
            continue
        picked.append((r, c))
        r0, r1 = max(0, r - nms_radius), min(h, r + nms_radius + 1)
        c0, c1 = max(0, c - nms_radius), min(w, c + nms_radius + 1)
        suppressed[r0:r1, c0:c1] = True
    s = sm.stride
    return [PointPrompt(x=(c + 0.5) * s, y=(r + 0.5) * s, polarity="positive") for r, c in picked]
