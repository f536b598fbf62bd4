"""Trainable delta parameters attached to a frozen decoder.

An ``EPEFTState`` owns every trainable array: LoRA A/B pairs, IA3 rescaling
vectors, prepended memory tokens with their output gates, per-block
bottleneck adapters, and the conditioning MLP that feeds the mean image
representation into the memory tokens. The base weights are never touched.

A freshly attached state is an exact identity: LoRA B is zero, IA3 vectors
are ones, token gates are zero, adapter up-projections are zero, and the
conditioning MLP's final layer is zero.
"""

from __future__ import annotations

import fnmatch
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from vplab.errors import ShapeError, TargetResolutionError
from vplab.peft.config import EPEFTConfig, config_fingerprint
from vplab.segcore.types import DecoderConfig
from vplab.segcore.weights import linear_inventory

_INIT_STD = 0.02


@dataclass
class LoRABranch:
    target_layer: str
    A: torch.Tensor  # (rank, d_in)
    B: torch.Tensor  # (d_out, rank)
    rank: int
    alpha: float
    d_in: int
    d_out: int


@dataclass
class IA3Branch:
    """Multiplicative rescaling vectors for one decoder block.

    One (l_k, l_v) pair per attention unit in the block plus one l_ff over
    the inner MLP activations.
    """

    target_block: int
    l_k_self: torch.Tensor
    l_v_self: torch.Tensor
    l_k_t2i: torch.Tensor
    l_v_t2i: torch.Tensor
    l_k_i2t: torch.Tensor
    l_v_i2t: torch.Tensor
    l_ff: torch.Tensor

    def kv(self, unit: str) -> tuple[torch.Tensor, torch.Tensor]:
        if unit == "self_attn":
            return self.l_k_self, self.l_v_self
        if unit == "cross_token_to_image":
            return self.l_k_t2i, self.l_v_t2i
        if unit == "cross_image_to_token":
            return self.l_k_i2t, self.l_v_i2t
        raise KeyError(unit)


@dataclass
class PromptBank:
    """Trainable memory tokens prepended to both decoder input streams."""

    tokens_tok: torch.Tensor  # (m_tok, d), or (depth, m_tok, d) when deep
    tokens_img: torch.Tensor  # (m_img, d)
    gate_tok: torch.Tensor  # scalar
    gate_img: torch.Tensor  # scalar
    deep: bool = False

    @property
    def m_tok(self) -> int:
        return self.tokens_tok.shape[-2]

    @property
    def m_img(self) -> int:
        return self.tokens_img.shape[0]

    def tokens_for(self, kind: str, layer: int) -> torch.Tensor:
        if kind == "tok":
            return self.tokens_tok[layer] if self.deep else self.tokens_tok
        if kind == "img":
            return self.tokens_img
        raise KeyError(kind)


@dataclass
class AdapterBlock:
    """Residual bottleneck MLP inserted after one block's MLP."""

    target_block: int
    W_down: torch.Tensor  # (b, d)
    b_down: torch.Tensor  # (b,)
    W_up: torch.Tensor  # (d, b)
    b_up: torch.Tensor  # (d,)

    @property
    def bottleneck(self) -> int:
        return self.W_down.shape[0]


@dataclass
class CondMLP:
    """Two-layer map from the mean image feature onto the memory tokens."""

    W1: torch.Tensor
    b1: torch.Tensor
    W2: torch.Tensor
    b2: torch.Tensor

    def apply(self, x: torch.Tensor) -> torch.Tensor:
        dtype = x.dtype
        h = F.gelu(x @ self.W1.to(dtype).t() + self.b1.to(dtype))
        return h @ self.W2.to(dtype).t() + self.b2.to(dtype)


@dataclass
class EPEFTState:
    config: EPEFTConfig
    decoder_cfg: DecoderConfig
    d_enc: int
    config_fingerprint: str
    lora: dict[str, LoRABranch] = field(default_factory=dict)
    ia3: dict[int, IA3Branch] = field(default_factory=dict)
    prompts: PromptBank | None = None
    adapters: dict[int, AdapterBlock] = field(default_factory=dict)
    cond: CondMLP | None = None
    merged: bool = False

    def ia3_for(self, block: int) -> IA3Branch | None:
        return self.ia3.get(block)

    def adapter_for(self, block: int) -> AdapterBlock | None:
        return self.adapters.get(block)

    def named_arrays(self) -> list[tuple[str, torch.Tensor]]:
        """Canonical (name, tensor) ordering used by training and checkpoints."""
        out: list[tuple[str, torch.Tensor]] = []
        for path, br in self.lora.items():
            out.append((f"lora.{path}.A", br.A))
            out.append((f"lora.{path}.B", br.B))
        for idx, br in self.ia3.items():
            for f_name in ("l_k_self", "l_v_self", "l_k_t2i", "l_v_t2i", "l_k_i2t", "l_v_i2t", "l_ff"):
                out.append((f"ia3.{idx}.{f_name}", getattr(br, f_name)))
        if self.prompts is not None:
            out.append(("prompts.tokens_tok", self.prompts.tokens_tok))
            out.append(("prompts.tokens_img", self.prompts.tokens_img))
            out.append(("prompts.gate_tok", self.prompts.gate_tok))
            out.append(("prompts.gate_img", self.prompts.gate_img))
        for idx, blk in self.adapters.items():
            out.append((f"adapter.{idx}.W_down", blk.W_down))
            out.append((f"adapter.{idx}.b_down", blk.b_down))
            out.append((f"adapter.{idx}.W_up", blk.W_up))
            out.append((f"adapter.{idx}.b_up", blk.b_up))
        if self.cond is not None:
            out.append(("cond.W1", self.cond.W1))
            out.append(("cond.b1", self.cond.b1))
            out.append(("cond.W2", self.cond.W2))
            out.append(("cond.b2", self.cond.b2))
        return out

    def arrays_by_technique(self) -> dict[str, list[torch.Tensor]]:
        groups: dict[str, list[torch.Tensor]] = {"lora": [], "ia3": [], "prompts": [], "adapter": [], "cond_mlp": []}
        for name, t in self.named_arrays():
            key = name.split(".", 1)[0]
            groups["cond_mlp" if key == "cond" else key].append(t)
        return groups

    def trainable_tensors(self) -> list[torch.Tensor]:
        return [t for _, t in self.named_arrays()]

    def set_requires_grad(self, flag: bool = True) -> None:
        for t in self.trainable_tensors():
            t.requires_grad_(flag)

    def _replace_tensors(self, fn) -> "EPEFTState":
        lora = {
            p: LoRABranch(br.target_layer, fn(br.A), fn(br.B), br.rank, br.alpha, br.d_in, br.d_out)
            for p, br in self.lora.items()
        }
        ia3 = {
            i: IA3Branch(
                br.target_block,
                *(fn(getattr(br, f_name)) for f_name in
                  ("l_k_self", "l_v_self", "l_k_t2i", "l_v_t2i", "l_k_i2t", "l_v_i2t", "l_ff")),
            )
            for i, br in self.ia3.items()
        }
        prompts = None
        if self.prompts is not None:
            prompts = PromptBank(
                fn(self.prompts.tokens_tok), fn(self.prompts.tokens_img),
                fn(self.prompts.gate_tok), fn(self.prompts.gate_img), deep=self.prompts.deep,
            )
        adapters = {
            i: AdapterBlock(blk.target_block, fn(blk.W_down), fn(blk.b_down), fn(blk.W_up), fn(blk.b_up))
            for i, blk in self.adapters.items()
        }
        cond = None
        if self.cond is not None:
            cond = CondMLP(fn(self.cond.W1), fn(self.cond.b1), fn(self.cond.W2), fn(self.cond.b2))
        return EPEFTState(
            config=self.config, decoder_cfg=self.decoder_cfg, d_enc=self.d_enc,
            config_fingerprint=self.config_fingerprint, lora=lora, ia3=ia3,
            prompts=prompts, adapters=adapters, cond=cond, merged=self.merged,
        )

    def clone(self) -> "EPEFTState":
        return self._replace_tensors(lambda t: t.detach().clone())

    def cast(self, dtype: torch.dtype) -> "EPEFTState":
        return self._replace_tensors(lambda t: t.detach().clone().to(dtype))


def resolve_lora_targets(
    cfg: EPEFTConfig, inventory: dict[str, tuple[int, int]]
) -> list[str]:
    """Expand target patterns against the decoder's linear-layer inventory."""
    paths = list(inventory)
    resolved: list[str] = []
    for pattern in cfg.lora_targets:
        matches = [p for p in paths if fnmatch.fnmatch(p, pattern)]
        if not matches:
            raise TargetResolutionError(
                f"pattern {pattern!r} matched no decoder layer; available: {paths}"
            )
        for m in matches:
            if m not in resolved:
                resolved.append(m)
    return sorted(resolved, key=paths.index)


def attach(
    cfg: EPEFTConfig, decoder_cfg: DecoderConfig, weights: dict[str, torch.Tensor]
) -> EPEFTState:
    """Build a fresh, identity-at-init PEFT state for the given decoder."""
    d_enc = weights["input_proj.weight"].shape[1]
    gen = torch.Generator().manual_seed(cfg.seed)
    inventory = linear_inventory(decoder_cfg, d_enc)
    d, depth = decoder_cfg.d, decoder_cfg.depth

    def small(shape):
        t = torch.empty(*shape)
        t.normal_(0.0, _INIT_STD, generator=gen)
        return t

    state = EPEFTState(
        config=cfg,
        decoder_cfg=decoder_cfg,
        d_enc=d_enc,
        config_fingerprint=config_fingerprint(cfg, decoder_cfg, d_enc),
    )

    if cfg.enable_lora:
        for path in resolve_lora_targets(cfg, inventory):
            d_out, d_in = inventory[path]
            state.lora[path] = LoRABranch(
                target_layer=path,
                A=small((cfg.lora_rank, d_in)),
                B=torch.zeros(d_out, cfg.lora_rank),
                rank=cfg.lora_rank,
                alpha=cfg.lora_alpha,
                d_in=d_in,
                d_out=d_out,
            )

    if cfg.enable_ia3:
        blocks = range(depth) if cfg.ia3_blocks is None else cfg.ia3_blocks
        for i in blocks:
            if not (0 <= i < depth):
                raise TargetResolutionError(f"ia3 block {i} out of range [0, {depth})")
            state.ia3[i] = IA3Branch(
                target_block=i,
                l_k_self=torch.ones(d), l_v_self=torch.ones(d),
                l_k_t2i=torch.ones(decoder_cfg.d_down), l_v_t2i=torch.ones(decoder_cfg.d_down),
                l_k_i2t=torch.ones(decoder_cfg.d_down), l_v_i2t=torch.ones(decoder_cfg.d_down),
                l_ff=torch.ones(decoder_cfg.d_mlp),
            )

    if cfg.enable_prompts:
        tok_shape = (depth, cfg.m_tok, d) if cfg.deep_prompts else (cfg.m_tok, d)
        state.prompts = PromptBank(
            tokens_tok=small(tok_shape),
            tokens_img=small((cfg.m_img, d)),
            gate_tok=torch.zeros(()),
            gate_img=torch.zeros(()),
            deep=cfg.deep_prompts,
        )

    if cfg.enable_adapter:
        if cfg.adapter_bottleneck >= d:
            raise ShapeError(
                f"adapter bottleneck {cfg.adapter_bottleneck} must be smaller than d={d}"
            )
        for i in range(depth):
            state.adapters[i] = AdapterBlock(
                target_block=i,
                W_down=small((cfg.adapter_bottleneck, d)),
                b_down=torch.zeros(cfg.adapter_bottleneck),
                W_up=torch.zeros(d, cfg.adapter_bottleneck),
                b_up=torch.zeros(d),
            )
        if cfg.enable_prompts and (cfg.m_tok + cfg.m_img) > 0:
            state.cond = CondMLP(
                W1=small((d, d)), b1=torch.zeros(d), W2=torch.zeros(d, d), b2=torch.zeros(d)
            )

    return state


def count_trainable(state: EPEFTState) -> dict[str, int]:
    """Closed-form per-technique parameter counts (not an array walk)."""
    cfg, dec = state.config, state.decoder_cfg
    d, depth = dec.d, dec.depth
    counts = {"lora": 0, "ia3": 0, "prompts": 0, "adapter": 0, "cond_mlp": 0}
    if cfg.enable_lora:
        counts["lora"] = sum(br.rank * (br.d_in + br.d_out) for br in state.lora.values())
    if cfg.enable_ia3:
        per_block = 2 * d + 4 * dec.d_down + dec.d_mlp
        counts["ia3"] = per_block * len(state.ia3)
    if cfg.enable_prompts:
        tok = depth * cfg.m_tok * d if cfg.deep_prompts else cfg.m_tok * d
        counts["prompts"] = tok + cfg.m_img * d + 2
    if cfg.enable_adapter:
        b = cfg.adapter_bottleneck
        counts["adapter"] = depth * (2 * d * b + b + d)
        if state.cond is not None:
            counts["cond_mlp"] = 2 * (d * d + d)
    counts["total"] = sum(counts.values())
    return counts
