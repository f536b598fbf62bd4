"""Sinusoidal positional encodings shared by point prompts and the image grid.

A point at pixel (x, y) and the feature cell containing it receive nearly
identical encodings, which is what lets the decoder associate sparse prompts
with grid locations.
"""

from __future__ import annotations

import torch


def sinusoidal_xy(xn: torch.Tensor, yn: torch.Tensor, d: int) -> torch.Tensor:
    """Encode normalized coordinates in [0, 1] into d-dim sin/cos features.

    Half the channels encode x, half encode y; within each half the usual
    geometric frequency ladder is used. ``xn``/``yn`` may be any broadcastable
    shape; the output gains a trailing dimension of size d.
    """
    if d % 4 != 0:
        raise ValueError(f"embedding width must be divisible by 4, got {d}")
    half = d // 2
    n_freq = half // 2
    device = xn.device
    dtype = xn.dtype if xn.dtype.is_floating_point else torch.float32
    freqs = torch.exp(
        torch.arange(n_freq, device=device, dtype=dtype)
        * (-torch.log(torch.tensor(10000.0, dtype=dtype)) / max(n_freq - 1, 1))
    )
    # scale into a useful phase range before the frequency ladder
    ang_x = xn.to(dtype).unsqueeze(-1) * freqs * (2.0 * torch.pi)
    ang_y = yn.to(dtype).unsqueeze(-1) * freqs * (2.0 * torch.pi)
    return torch.cat(
        [torch.sin(ang_x), torch.cos(ang_x), torch.sin(ang_y), torch.cos(ang_y)], dim=-1
    )


def grid_pe(h: int, w: int, d: int, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Positional encoding for every cell center of an h×w grid, shape (h*w, d)."""
    ys = (torch.arange(h, dtype=dtype) + 0.5) / h
    xs = (torch.arange(w, dtype=dtype) + 0.5) / w
    yy, xx = torch.meshgrid(ys, xs, indexing="ij")
    pe = sinusoidal_xy(xx.reshape(-1), yy.reshape(-1), d)
    return pe.to(dtype)
