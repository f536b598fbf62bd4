"""Pluggable frozen image encoders.

The default "toy-patch" encoder is a small strided convolutional patch
embedder with weights drawn once from a fixed seed. It stands in for a large
pretrained backbone: all the matcher needs is a deterministic feature grid in
which similar appearance maps to similar vectors. The convolutions carry no
bias, so an all-zero image produces an all-zero grid (useful as a guaranteed
no-match input).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from vplab.errors import EncoderNotFound, InvalidImage
from vplab.segcore.types import FeatureGrid, ImageRGB

_TOY_PATCH_SEED = 71521


@dataclass(frozen=True)
class EncoderSpec:
    name: str
    stride: int
    dim: int
    conv_weights: tuple  # tuple of (out, in, k, k) tensors, applied with stride 2 each


def _build_toy_patch() -> EncoderSpec:
    gen = torch.Generator().manual_seed(_TOY_PATCH_SEED)
    channels = [3, 16, 32, 32]
    weights = []
    for cin, cout in zip(channels[:-1], channels[1:]):
        std = (2.0 / (cin * 9)) ** 0.5
        w = torch.empty(cout, cin, 3, 3)
        w.normal_(0.0, std, generator=gen)
        weights.append(w)
    return EncoderSpec(name="toy-patch", stride=8, dim=channels[-1], conv_weights=tuple(weights))


_REGISTRY: dict[str, EncoderSpec] = {}


def register_encoder(spec: EncoderSpec) -> None:
    _REGISTRY[spec.name] = spec


def get_encoder(encoder_id: str) -> EncoderSpec:
    if encoder_id not in _REGISTRY:
        raise EncoderNotFound(
            f"unknown encoder {encoder_id!r}; registered: {sorted(_REGISTRY)}"
        )
    return _REGISTRY[encoder_id]


register_encoder(_build_toy_patch())


def encode_image(img: ImageRGB, encoder_id: str = "toy-patch") -> FeatureGrid:
    """Run a registered frozen encoder over an image.

    Deterministic for a fixed (image, encoder) pair. The image height and
    width must be multiples of the encoder stride so the grid tiles exactly.
    """
    enc = get_encoder(encoder_id)
    px = np.asarray(img.pixels, dtype=np.float32)
    if not np.isfinite(px).all():
        raise InvalidImage("image contains non-finite values")
    h_img, w_img = px.shape[:2]
    if h_img % enc.stride != 0 or w_img % enc.stride != 0:
        raise InvalidImage(
            f"image size {h_img}×{w_img} is not a multiple of encoder stride {enc.stride}"
        )
    with torch.no_grad():
        x = torch.from_numpy(px).permute(2, 0, 1).unsqueeze(0)  # (1, 3, H, W)
        for i, w in enumerate(enc.conv_weights):
            x = F.conv2d(x, w, bias=None, stride=2, padding=1)
            if i < len(enc.conv_weights) - 1:
                x = F.gelu(x)
        feats = x.squeeze(0).permute(1, 2, 0).contiguous()  # (h, w, d)
    return FeatureGrid(features=feats, stride=enc.stride, source_image_id=img.id)
