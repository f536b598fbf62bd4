"""Ensemble PEFT configuration: which techniques are on and how big they are."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields

from vplab.segcore.types import DecoderConfig


@dataclass(frozen=True)
class EPEFTConfig:
    """Configuration of the four-technique ensemble.

    At least one technique must be enabled. ``lora_targets`` are fnmatch
    patterns over decoder linear-layer paths; ``ia3_blocks`` of None means
    every block. ``deep_prompts`` swaps the single prepended token bank for a
    fresh bank per decoder block (token stream only).
    """

    enable_lora: bool = True
    enable_ia3: bool = True
    enable_prompts: bool = True
    enable_adapter: bool = True
    lora_rank: int = 4
    lora_alpha: float = 4.0
    lora_targets: tuple[str, ...] = ("*.q_proj", "*.v_proj", "*.mlp.lin1", "*.mlp.lin2")
    ia3_blocks: tuple[int, ...] | None = None
    m_tok: int = 8
    m_img: int = 8
    deep_prompts: bool = False
    adapter_bottleneck: int = 32
    seed: int = 0

    def __post_init__(self):
        if not (self.enable_lora or self.enable_ia3 or self.enable_prompts or self.enable_adapter):
            raise ValueError("at least one PEFT technique must be enabled")
        if self.enable_lora and self.lora_rank < 1:
            raise ValueError("lora_rank must be >= 1")
        if self.m_tok < 0 or self.m_img < 0:
            raise ValueError("memory token counts must be >= 0")
        if self.adapter_bottleneck < 1:
            raise ValueError("adapter_bottleneck must be >= 1")
        object.__setattr__(self, "lora_targets", tuple(self.lora_targets))
        if self.ia3_blocks is not None:
            object.__setattr__(self, "ia3_blocks", tuple(self.ia3_blocks))

    def to_text(self) -> str:
        """Canonical key/value document (also hashed into the fingerprint)."""
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif v is None:
                v = "all" if f.name == "ia3_blocks" else ""
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EPEFTConfig":
        kv = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            kv[key.strip()] = value.strip()
        kwargs = {}
        for f in fields(cls):
            if f.name not in kv:
                continue
            raw = kv[f.name]
            if f.name in ("enable_lora", "enable_ia3", "enable_prompts", "enable_adapter", "deep_prompts"):
                kwargs[f.name] = raw.lower() in ("true", "1", "yes", "on")
            elif f.name == "lora_targets":
                kwargs[f.name] = tuple(s for s in raw.split(",") if s)
            elif f.name == "ia3_blocks":
                kwargs[f.name] = None if raw in ("all", "") else tuple(int(s) for s in raw.split(","))
            elif f.name == "lora_alpha":
                kwargs[f.name] = float(raw)
            else:
                kwargs[f.name] = int(raw)
        return cls(**kwargs)


def config_fingerprint(cfg: EPEFTConfig, decoder_cfg: DecoderConfig, d_enc: int) -> str:
    """Stable hash binding a PEFT config to a decoder shape."""
    h = hashlib.sha256()
    h.update(cfg.to_text().encode())
    h.update(repr(sorted(decoder_cfg.as_dict().items())).encode())
    h.update(str(d_enc).encode())
    return h.hexdigest()
