"""EPEF1 adapter-only checkpoints.

Same container discipline as the base-weight fixture: magic line, text
key/value header (PEFT config, decoder fingerprint, ordered array manifest),
then raw little-endian float32 arrays. Base weights are never included, so a
checkpoint is ~4 bytes per trainable parameter.
"""

from __future__ import annotations

import torch

from vplab.errors import ConfigMismatch, CorruptCheckpoint
from vplab.peft.config import EPEFTConfig, config_fingerprint
from vplab.peft.state import EPEFTState, attach
from vplab.segcore.types import DecoderConfig
from vplab.segcore.weights import read_blob, unpack_arrays, write_blob

MAGIC = b"EPEF1"


def save_delta(state: EPEFTState) -> bytes:
    pairs = [("version", "1"), ("dtype", "f32le"), ("fingerprint", state.config_fingerprint)]
    pairs += [(f"peft.{line.split(' = ')[0]}", line.split(" = ")[1])
              for line in state.config.to_text().strip().splitlines()]
    named = state.named_arrays()
    pairs += [(f"array.{n}", " ".join(str(s) for s in t.shape)) for n, t in named]
    arrays = [t.detach().to(torch.float32).contiguous().numpy() for _, t in named]
    return write_blob(MAGIC, pairs, arrays)


def load_delta(
    data: bytes, decoder_cfg: DecoderConfig, weights: dict[str, torch.Tensor]
) -> EPEFTState:
    """Rebuild a state from checkpoint bytes against the given decoder."""
    kv, manifest, payload = read_blob(data, MAGIC)
    if kv.get("dtype") != "f32le":
        raise CorruptCheckpoint(f"unsupported dtype {kv.get('dtype')!r}")
    cfg_text = "\n".join(
        f"{k[len('peft.'):]} = {v}" for k, v in kv.items() if k.startswith("peft.")
    )
    try:
        cfg = EPEFTConfig.from_text(cfg_text)
    except (ValueError, TypeError) as exc:
        raise CorruptCheckpoint(f"bad config header: {exc}") from exc

    d_enc = weights["input_proj.weight"].shape[1]
    expected = config_fingerprint(cfg, decoder_cfg, d_enc)
    if kv.get("fingerprint") != expected:
        raise ConfigMismatch(
            "checkpoint fingerprint does not match this decoder/config combination"
        )

    state = attach(cfg, decoder_cfg, weights)
    arrays = unpack_arrays(manifest, payload)
    expected_names = [n for n, _ in state.named_arrays()]
    if list(arrays) != expected_names:
        raise CorruptCheckpoint("array manifest does not match the attached state layout")
    for name, tensor in state.named_arrays():
        loaded = arrays[name]
        if tuple(loaded.shape) != tuple(tensor.shape):
            raise CorruptCheckpoint(
                f"array {name!r} has shape {tuple(loaded.shape)}, expected {tuple(tensor.shape)}"
            )
        tensor.data.copy_(loaded)
    return state
