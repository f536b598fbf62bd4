"""Convenience bundle of encoder id, decoder config, and base weights."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import TYPE_CHECKING, Optional

import torch

from vplab.segcore.decoder import decode
from vplab.segcore.encoder import encode_image, get_encoder
from vplab.segcore.masks import binarize
from vplab.segcore.prompts import encode_points
from vplab.segcore.types import BinaryMask, DecoderConfig, FeatureGrid, ImageRGB, MaskLogits, PointPrompt
from vplab.segcore.weights import init_decoder_weights, load_base_weights, save_base_weights

if TYPE_CHECKING:
    from vplab.peft.state import EPEFTState

FIXTURE_NAME = "tiny_base.segc"


@dataclass
class SegModel:
    encoder_id: str
    cfg: DecoderConfig
    weights: dict[str, torch.Tensor]

    @property
    def d_enc(self) -> int:
        return self.weights["input_proj.weight"].shape[1]

    @property
    def stride(self) -> int:
        return get_encoder(self.encoder_id).stride

    def encode(self, img: ImageRGB) -> FeatureGrid:
        return encode_image(img, self.encoder_id)

    def decode_points(
        self,
        grid: FeatureGrid,
        points: list[PointPrompt],
        img_size: tuple[int, int],
        peft: Optional["EPEFTState"] = None,
    ) -> MaskLogits:
        tokens = encode_points(points, img_size, self.cfg.d, self.weights)
        return decode(grid, tokens, self.cfg, self.weights, peft=peft)

    def predict_mask(
        self,
        img: ImageRGB,
        points: list[PointPrompt],
        peft: Optional["EPEFTState"] = None,
        threshold: float = 0.0,
    ) -> tuple[BinaryMask, MaskLogits, int]:
        """Encode, decode, and binarize the highest-IoU slot at image size."""
        grid = self.encode(img)
        ml = self.decode_points(grid, points, (img.height, img.width), peft=peft)
        slot = ml.best_slot()
        mask = binarize(ml, slot, threshold=threshold, target_size=(img.height, img.width))
        return mask, ml, slot

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(save_base_weights(self.cfg, self.d_enc, self.encoder_id, self.weights))

    @classmethod
    def load(cls, path: str | Path) -> "SegModel":
        cfg, _d_enc, encoder_id, weights = load_base_weights(Path(path).read_bytes())
        return cls(encoder_id=encoder_id, cfg=cfg, weights=weights)

    @classmethod
    def random(cls, cfg: DecoderConfig, encoder_id: str = "toy-patch", seed: int = 0) -> "SegModel":
        d_enc = get_encoder(encoder_id).dim
        return cls(encoder_id=encoder_id, cfg=cfg, weights=init_decoder_weights(cfg, d_enc, seed=seed))


def fixture_path() -> Path:
    """Location of the pretrained tiny decoder shipped with the package."""
    return Path(str(resources.files("vplab") / "fixtures" / FIXTURE_NAME))


def load_fixture_model() -> SegModel:
    return SegModel.load(fixture_path())
