"""Decoder weight construction, hashing, and the SEGC1 fixture format.

Weights are a flat ordered mapping from layer path to tensor; the decoder
forward pass reads from it and never writes. The SEGC1 file is a
language-neutral container: a magic line, a text key/value header carrying
the config and an ordered array manifest, then raw little-endian float32
arrays in manifest order.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np
import torch

from vplab.errors import CorruptCheckpoint, ShapeError
from vplab.segcore.types import DecoderConfig

MAGIC = b"SEGC1"


def upscale_stages(cfg: DecoderConfig) -> list[tuple[int, int]]:
    """Channel (in, out) pairs for each 2× transposed-conv stage."""
    n = int(math.log2(cfg.upscale))
    if n == 0:
        return []
    chans = [cfg.d]
    for j in range(n):
        chans.append(cfg.d // 4 if j == 0 else cfg.d // 8)
    chans[-1] = cfg.d // 8
    return list(zip(chans[:-1], chans[1:]))


def linear_inventory(cfg: DecoderConfig, d_enc: int) -> dict[str, tuple[int, int]]:
    """Ordered map of every linear layer path to its (d_out, d_in)."""
    inv: dict[str, tuple[int, int]] = {}
    inv["input_proj"] = (cfg.d, d_enc)

    def attn(prefix: str, internal: int):
        inv[f"{prefix}.q_proj"] = (internal, cfg.d)
        inv[f"{prefix}.k_proj"] = (internal, cfg.d)
        inv[f"{prefix}.v_proj"] = (internal, cfg.d)
        inv[f"{prefix}.out_proj"] = (cfg.d, internal)

    for i in range(cfg.depth):
        attn(f"blocks.{i}.self_attn", cfg.d)
        attn(f"blocks.{i}.cross_token_to_image", cfg.d_down)
        inv[f"blocks.{i}.mlp.lin1"] = (cfg.d_mlp, cfg.d)
        inv[f"blocks.{i}.mlp.lin2"] = (cfg.d, cfg.d_mlp)
        attn(f"blocks.{i}.cross_image_to_token", cfg.d_down)
    attn("final_attn", cfg.d_down)
    for t in range(cfg.n_mask_tokens):
        inv[f"hyper_mlps.{t}.lin0"] = (cfg.d, cfg.d)
        inv[f"hyper_mlps.{t}.lin1"] = (cfg.d, cfg.d)
        inv[f"hyper_mlps.{t}.lin2"] = (cfg.d // 8, cfg.d)
    inv["iou_head.lin0"] = (cfg.d, cfg.d)
    inv["iou_head.lin1"] = (cfg.d, cfg.d)
    inv["iou_head.lin2"] = (cfg.n_mask_tokens, cfg.d)
    return inv


def attention_units(cfg: DecoderConfig) -> list[tuple[int, str, int]]:
    """(block index, attention name, key/value width) for every in-block attention."""
    units = []
    for i in range(cfg.depth):
        units.append((i, "self_attn", cfg.d))
        units.append((i, "cross_token_to_image", cfg.d_down))
        units.append((i, "cross_image_to_token", cfg.d_down))
    return units


def init_decoder_weights(cfg: DecoderConfig, d_enc: int, seed: int = 0) -> dict[str, torch.Tensor]:
    """Freshly initialized decoder weights keyed by layer path."""
    gen = torch.Generator().manual_seed(seed)
    w: dict[str, torch.Tensor] = {}

    def uniform(shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        t = torch.empty(*shape)
        t.uniform_(-bound, bound, generator=gen)
        return t

    def normal(shape, std=1.0):
        t = torch.empty(*shape)
        t.normal_(0.0, std, generator=gen)
        return t

    w["point_embed.positive"] = normal((cfg.d,))
    w["point_embed.negative"] = normal((cfg.d,))
    w["iou_token"] = normal((1, cfg.d))
    w["mask_tokens"] = normal((cfg.n_mask_tokens, cfg.d))
    for path, (dout, din) in linear_inventory(cfg, d_enc).items():
        w[f"{path}.weight"] = uniform((dout, din), din)
        w[f"{path}.bias"] = uniform((dout,), din)
    for i in range(cfg.depth):
        for n in ("norm1", "norm2", "norm3", "norm4"):
            w[f"blocks.{i}.{n}.weight"] = torch.ones(cfg.d)
            w[f"blocks.{i}.{n}.bias"] = torch.zeros(cfg.d)
    w["final_norm.weight"] = torch.ones(cfg.d)
    w["final_norm.bias"] = torch.zeros(cfg.d)

    stages = upscale_stages(cfg)
    if not stages:
        w["upscale.proj.weight"] = uniform((cfg.d // 8, cfg.d, 1, 1), cfg.d)
        w["upscale.proj.bias"] = uniform((cfg.d // 8,), cfg.d)
    for j, (cin, cout) in enumerate(stages):
        w[f"upscale.deconv{j}.weight"] = uniform((cin, cout, 2, 2), cin * 4)
        w[f"upscale.deconv{j}.bias"] = uniform((cout,), cin * 4)
        if j < len(stages) - 1:
            w[f"upscale.ln{j}.weight"] = torch.ones(cout)
            w[f"upscale.ln{j}.bias"] = torch.zeros(cout)
    return w


def weights_hash(weights: dict[str, torch.Tensor]) -> str:
    """Content hash over array names and float32 bytes, order-insensitive."""
    h = hashlib.sha256()
    for name in sorted(weights):
        h.update(name.encode())
        arr = weights[name].detach().to(torch.float32).contiguous().numpy()
        h.update(arr.astype("<f4", copy=False).tobytes())
    return h.hexdigest()


def _header_bytes(pairs: list[tuple[str, str]]) -> bytes:
    return "".join(f"{k} = {v}\n" for k, v in pairs).encode()


def write_blob(magic: bytes, pairs: list[tuple[str, str]], arrays: list[np.ndarray]) -> bytes:
    header = _header_bytes(pairs)
    out = bytearray()
    out += magic + b"\n"
    out += str(len(header)).encode() + b"\n"
    out += header
    for arr in arrays:
        out += arr.astype("<f4", copy=False).tobytes()
    return bytes(out)


def read_blob(data: bytes, magic: bytes) -> tuple[dict[str, str], list[tuple[str, tuple]], bytes]:
    """Parse a blob into (key/values, ordered array manifest, raw payload)."""
    try:
        first, rest = data.split(b"\n", 1)
    except ValueError:
        raise CorruptCheckpoint("missing magic line")
    if first != magic:
        raise CorruptCheckpoint(f"bad magic {first!r}, expected {magic!r}")
    try:
        size_line, rest = rest.split(b"\n", 1)
        header_len = int(size_line)
    except ValueError:
        raise CorruptCheckpoint("bad header length line")
    if header_len < 0 or header_len > len(rest):
        raise CorruptCheckpoint("header length exceeds payload")
    header, payload = rest[:header_len], rest[header_len:]
    kv: dict[str, str] = {}
    manifest: list[tuple[str, tuple]] = []
    for line in header.decode().splitlines():
        if not line.strip():
            continue
        if " = " not in line:
            raise CorruptCheckpoint(f"malformed header line {line!r}")
        key, value = line.split(" = ", 1)
        if key.startswith("array."):
            shape = tuple(int(s) for s in value.split()) if value.strip() else ()
            manifest.append((key[len("array."):], shape))
        else:
            kv[key] = value
    return kv, manifest, payload


def unpack_arrays(manifest: list[tuple[str, tuple]], payload: bytes) -> dict[str, torch.Tensor]:
    arrays: dict[str, torch.Tensor] = {}
    offset = 0
    for name, shape in manifest:
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 4
        if offset + nbytes > len(payload):
            raise CorruptCheckpoint(f"payload truncated at array {name!r}")
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset).reshape(shape)
        arrays[name] = torch.from_numpy(arr.copy())
        offset += nbytes
    if offset != len(payload):
        raise CorruptCheckpoint(f"{len(payload) - offset} trailing bytes after last array")
    return arrays


def save_base_weights(
    cfg: DecoderConfig, d_enc: int, encoder_id: str, weights: dict[str, torch.Tensor]
) -> bytes:
    pairs = [("version", "1"), ("dtype", "f32le"), ("encoder_id", encoder_id), ("d_enc", str(d_enc))]
    pairs += [(f"cfg.{k}", str(v)) for k, v in cfg.as_dict().items()]
    names = list(weights)
    pairs += [
        (f"array.{n}", " ".join(str(s) for s in weights[n].shape)) for n in names
    ]
    arrays = [weights[n].detach().to(torch.float32).contiguous().numpy() for n in names]
    return write_blob(MAGIC, pairs, arrays)


def load_base_weights(data: bytes) -> tuple[DecoderConfig, int, str, dict[str, torch.Tensor]]:
    kv, manifest, payload = read_blob(data, MAGIC)
    if kv.get("dtype") != "f32le":
        raise CorruptCheckpoint(f"unsupported dtype {kv.get('dtype')!r}")
    try:
        cfg = DecoderConfig(
            d=int(kv["cfg.d"]),
            depth=int(kv["cfg.depth"]),
            heads=int(kv["cfg.heads"]),
            d_down=int(kv["cfg.d_down"]),
            d_mlp=int(kv["cfg.d_mlp"]),
            n_mask_tokens=int(kv["cfg.n_mask_tokens"]),
            upscale=int(kv["cfg.upscale"]),
        )
        d_enc = int(kv["d_enc"])
        encoder_id = kv["encoder_id"]
    except (KeyError, ValueError, ShapeError) as exc:
        raise CorruptCheckpoint(f"bad header: {exc}") from exc
    weights = unpack_arrays(manifest, payload)
    return cfg, d_enc, encoder_id, weights
