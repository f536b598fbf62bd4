"""Folding LoRA branches into base weights for branch-free inference."""

from __future__ import annotations

import torch

from vplab.errors import MergeStateError
from vplab.peft.ops import merged_lora_weight
from vplab.peft.state import EPEFTState


def merge_lora(state: EPEFTState, weights: dict[str, torch.Tensor]) -> dict[str, torch.Tensor]:
    """Return a new weight mapping with every LoRA delta folded in.

    The returned mapping shares unmodified tensors with the input. The state
    is flagged as merged so the decoder skips its branches; merging twice
    raises.
    """
    if state.merged:
        raise MergeStateError("state is already merged")
    merged = dict(weights)
    for path, br in state.lora.items():
        merged[f"{path}.weight"] = merged_lora_weight(weights[f"{path}.weight"], br)
    state.merged = True
    return merged


def unmerge_lora(state: EPEFTState, weights: dict[str, torch.Tensor]) -> dict[str, torch.Tensor]:
    """Inverse of ``merge_lora``; restores base weights from a merged mapping."""
    if not state.merged:
        raise MergeStateError("state is not merged")
    restored = dict(weights)
    for path, br in state.lora.items():
        delta = (br.alpha / br.rank) * (br.B @ br.A)
        restored[f"{path}.weight"] = weights[f"{path}.weight"] - delta
    state.merged = False
    return restored
