"""Point prompt encoding."""

from __future__ import annotations

import torch

from vplab.errors import InvalidPrompt
from vplab.segcore.positional import sinusoidal_xy
from vplab.segcore.types import PointPrompt


def encode_points(
    points: list[PointPrompt],
    img_size: tuple[int, int],
    d: int,
    weights: dict[str, torch.Tensor],
) -> torch.Tensor:
    """Turn clicks into an (n, d) token sequence.

    Each token is the sinusoidal encoding of the normalized coordinate plus
    the learned embedding for its polarity.
    """
    if not points:
        raise InvalidPrompt("point list is empty")
    h, w = img_size
    for p in points:
        if not (0 <= p.x < w and 0 <= p.y < h):
            raise InvalidPrompt(f"point ({p.x}, {p.y}) outside {h}×{w} image")
    dtype = weights["point_embed.positive"].dtype
    xs = torch.tensor([p.x / w for p in points], dtype=dtype)
    ys = torch.tensor([p.y / h for p in points], dtype=dtype)
    pe = sinusoidal_xy(xs, ys, d)
    polarity = torch.stack(
        [
            weights["point_embed.positive"] if p.polarity == "positive" else weights["point_embed.negative"]
            for p in points
        ]
    )
    return pe + polarity
