import numpy as np
import pytest
import torch

from vplab.peft import EPEFTConfig
from vplab.segcore import DecoderConfig, ImageRGB, init_decoder_weights


@pytest.fixture(scope="session")
def tiny_cfg():
    return DecoderConfig.tiny()


@pytest.fixture(scope="session")
def tiny_weights(tiny_cfg):
    return init_decoder_weights(tiny_cfg, d_enc=32, seed=7)


@pytest.fixture
def rand_image():
    rng = np.random.default_rng(42)
    return ImageRGB(pixels=rng.random((64, 64, 3), dtype=np.float32), id="rand-64")


def tiny_peft_config(**overrides) -> EPEFTConfig:
    kwargs = dict(adapter_bottleneck=8)
    kwargs.update(overrides)
    return EPEFTConfig(**kwargs)


def random_epeft_config(rng: np.random.Generator) -> EPEFTConfig:
    """A random valid config for the tiny decoder profile."""
    pattern_pool = [
        ("*.q_proj", "*.v_proj", "*.mlp.lin1", "*.mlp.lin2"),
        ("*.q_proj", "*.v_proj"),
        ("blocks.*.self_attn.q_proj",),
        ("*.mlp.lin1", "*.mlp.lin2"),
        ("*.out_proj",),
    ]
    while True:
        flags = rng.random(4) < 0.7
        if flags.any():
            break
    return EPEFTConfig(
        enable_lora=bool(flags[0]),
        enable_ia3=bool(flags[1]),
        enable_prompts=bool(flags[2]),
        enable_adapter=bool(flags[3]),
        lora_rank=int(rng.choice([1, 2, 4, 8])),
        lora_alpha=float(rng.choice([1.0, 4.0, 8.0])),
        lora_targets=pattern_pool[int(rng.integers(len(pattern_pool)))],
        ia3_blocks=None if rng.random() < 0.5 else (int(rng.integers(2)),),
        m_tok=int(rng.integers(0, 9)),
        m_img=int(rng.integers(0, 9)),
        deep_prompts=bool(rng.random() < 0.25),
        adapter_bottleneck=int(rng.choice([2, 4, 8])),
        seed=int(rng.integers(10_000)),
    )


@pytest.fixture
def make_random_config():
    return random_epeft_config
