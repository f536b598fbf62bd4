"""Promptable segmentation core: encoder registry, prompt encoding, two-way decoder."""

from vplab.segcore.decoder import decode
from vplab.segcore.encoder import encode_image, get_encoder, register_encoder
from vplab.segcore.masks import binarize
from vplab.segcore.model import SegModel, fixture_path, load_fixture_model
from vplab.segcore.prompts import encode_points
from vplab.segcore.types import (
    BinaryMask,
    DecoderConfig,
    FeatureGrid,
    ImageRGB,
    MaskLogits,
    PointPrompt,
)
from vplab.segcore.weights import (
    attention_units,
    init_decoder_weights,
    linear_inventory,
    load_base_weights,
    save_base_weights,
    weights_hash,
)

__all__ = [
    "BinaryMask",
    "DecoderConfig",
    "FeatureGrid",
    "ImageRGB",
    "MaskLogits",
    "PointPrompt",
    "SegModel",
    "attention_units",
    "binarize",
    "decode",
    "encode_image",
    "encode_points",
    "fixture_path",
    "get_encoder",
    "init_decoder_weights",
    "linear_inventory",
    "load_base_weights",
    "load_fixture_model",
    "register_encoder",
    "save_base_weights",
    "weights_hash",
]
