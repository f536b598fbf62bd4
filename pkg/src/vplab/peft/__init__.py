"""Ensemble parameter-efficient fine-tuning over the frozen two-way decoder."""

from vplab.peft.checkpoint import load_delta, save_delta
from vplab.peft.config import EPEFTConfig, config_fingerprint
from vplab.peft.merge import merge_lora, unmerge_lora
from vplab.peft.ops import adapter_forward, ia3_forward, inject_prompts, lora_forward
from vplab.peft.state import (
    AdapterBlock,
    CondMLP,
    EPEFTState,
    IA3Branch,
    LoRABranch,
    PromptBank,
    attach,
    count_trainable,
)

__all__ = [
    "AdapterBlock",
    "CondMLP",
    "EPEFTConfig",
    "EPEFTState",
    "IA3Branch",
    "LoRABranch",
    "PromptBank",
    "adapter_forward",
    "attach",
    "config_fingerprint",
    "count_trainable",
    "ia3_forward",
    "inject_prompts",
    "load_delta",
    "lora_forward",
    "merge_lora",
    "save_delta",
    "unmerge_lora",
]
