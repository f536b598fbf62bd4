"""Pure forward rules for the individual PEFT techniques."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from vplab.errors import ShapeError
from vplab.peft.state import AdapterBlock, CondMLP, IA3Branch, LoRABranch, PromptBank


def lora_forward(x: torch.Tensor, W: torch.Tensor, branch: LoRABranch) -> torch.Tensor:
    """W·x plus the scaled low-rank correction (alpha/r)·B·(A·x)."""
    if x.shape[-1] != W.shape[1] or branch.A.shape[1] != W.shape[1] or branch.B.shape[0] != W.shape[0]:
        raise ShapeError(
            f"lora shapes disagree: x {tuple(x.shape)}, W {tuple(W.shape)}, "
            f"A {tuple(branch.A.shape)}, B {tuple(branch.B.shape)}"
        )
    return x @ W.t() + (branch.alpha / branch.rank) * ((x @ branch.A.t()) @ branch.B.t())


def merged_lora_weight(W: torch.Tensor, branch: LoRABranch) -> torch.Tensor:
    return W + (branch.alpha / branch.rank) * (branch.B @ branch.A)


def ia3_forward(
    keys: torch.Tensor,
    values: torch.Tensor,
    ff_inner: torch.Tensor,
    branch: IA3Branch,
    unit: str = "self_attn",
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Elementwise rescaling of projected keys/values and inner MLP activations."""
    l_k, l_v = branch.kv(unit)
    if keys.shape[-1] != l_k.shape[0] or values.shape[-1] != l_v.shape[0]:
        raise ShapeError("key/value widths do not match the rescaling vectors")
    if ff_inner.shape[-1] != branch.l_ff.shape[0]:
        raise ShapeError("inner MLP width does not match l_ff")
    return keys * l_k, values * l_v, ff_inner * branch.l_ff


def adapter_forward(x: torch.Tensor, blk: AdapterBlock) -> torch.Tensor:
    """Residual bottleneck: x + W_up·gelu(W_down·x + b_down) + b_up."""
    if x.shape[-1] != blk.W_down.shape[1]:
        raise ShapeError(
            f"adapter expects width {blk.W_down.shape[1]}, got {x.shape[-1]}"
        )
    dtype = x.dtype
    h = F.gelu(x @ blk.W_down.to(dtype).t() + blk.b_down.to(dtype))
    return x + h @ blk.W_up.to(dtype).t() + blk.b_up.to(dtype)


@dataclass(frozen=True)
class StripPlan:
    """Positions of injected rows, so the decoder can drop them later."""

    token_positions: tuple[int, ...]
    image_positions: tuple[int, ...]


def conditioned_tokens(
    bank: PromptBank,
    kind: str,
    layer: int,
    cond: CondMLP | None,
    mean_image_feature: torch.Tensor,
    dtype: torch.dtype,
) -> torch.Tensor:
    toks = bank.tokens_for(kind, layer).to(dtype)
    if cond is not None and toks.shape[0] > 0:
        toks = toks + cond.apply(mean_image_feature)
    return toks


def inject_prompts(
    token_seq: torch.Tensor,
    image_seq: torch.Tensor,
    bank: PromptBank,
    mean_image_feature: torch.Tensor,
    cond: CondMLP | None = None,
) -> tuple[torch.Tensor, torch.Tensor, StripPlan]:
    """Prepend conditioned memory tokens to both decoder input streams.

    The gates themselves are applied inside attention (they multiply the
    injected keys' exponentiated scores); injection only alters sequence
    contents and records which rows to strip.
    """
    d = token_seq.shape[-1]
    if image_seq.shape[-1] != d or bank.tokens_for("tok", 0).shape[-1] != d:
        raise ShapeError("sequence widths disagree with the prompt bank")
    dtype = token_seq.dtype
    tok_new = conditioned_tokens(bank, "tok", 0, cond, mean_image_feature, dtype)
    img_new = conditioned_tokens(bank, "img", 0, cond, mean_image_feature, dtype)
    token_out = torch.cat([tok_new, token_seq], dim=0) if bank.m_tok else token_seq
    image_out = torch.cat([img_new, image_seq], dim=0) if bank.m_img else image_seq
    plan = StripPlan(
        token_positions=tuple(range(bank.m_tok)),
        image_positions=tuple(range(bank.m_img)),
    )
    return token_out, image_out, plan
