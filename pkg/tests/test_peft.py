import math

import numpy as np
import pytest
import torch

from vplab.errors import MergeStateError, ShapeError, TargetResolutionError
from vplab.peft import (
    EPEFTConfig,
    attach,
    count_trainable,
    merge_lora,
    unmerge_lora,
)
from vplab.peft.ops import adapter_forward, ia3_forward, inject_prompts, lora_forward
from vplab.peft.state import AdapterBlock, IA3Branch, LoRABranch, PromptBank
from vplab.segcore import (
    DecoderConfig,
    PointPrompt,
    decode,
    encode_image,
    encode_points,
    init_decoder_weights,
    weights_hash,
)
from conftest import tiny_peft_config

from vplab.segcore.types import ImageRGB


def _scene(tiny_cfg, tiny_weights, seed=0):
    rng = np.random.default_rng(seed)
    img = ImageRGB(pixels=rng.random((64, 64, 3), dtype=np.float32))
    grid = encode_image(img)
    pts = [PointPrompt(20, 28), PointPrompt(44, 12, "negative")]
    seq = encode_points(pts, (64, 64), tiny_cfg.d, tiny_weights)
    return grid, seq


class TestLoRAOp:
    def test_zero_B_is_plain_linear(self):
        W = torch.randn(3, 4)
        x = torch.randn(4)
        br = LoRABranch("t", A=torch.randn(2, 4), B=torch.zeros(3, 2), rank=2, alpha=2.0, d_in=4, d_out=3)
        assert torch.equal(lora_forward(x, W, br), x @ W.t())

    def test_hand_computed_delta(self):
        W = torch.eye(2)
        br = LoRABranch(
            "t", A=torch.tensor([[1.0, 1.0]]), B=torch.tensor([[2.0], [0.0]]),
            rank=1, alpha=1.0, d_in=2, d_out=2,
        )
        out = lora_forward(torch.tensor([1.0, 0.0]), W, br)
        assert torch.allclose(out, torch.tensor([3.0, 0.0]))

    def test_merged_weight_identity(self):
        W = torch.randn(5, 4)
        br = LoRABranch("t", A=torch.randn(2, 4), B=torch.randn(5, 2), rank=2, alpha=3.0, d_in=4, d_out=5)
        x = torch.randn(4)
        merged = W + (br.alpha / br.rank) * (br.B @ br.A)
        assert torch.allclose(lora_forward(x, W, br), x @ merged.t(), atol=1e-6)

    def test_shape_mismatch(self):
        br = LoRABranch("t", A=torch.randn(2, 4), B=torch.randn(5, 2), rank=2, alpha=1.0, d_in=4, d_out=5)
        with pytest.raises(ShapeError):
            lora_forward(torch.randn(3), torch.randn(5, 4), br)


class TestIA3Op:
    def _branch(self, d=2, d_mlp=3):
        ones = torch.ones
        return IA3Branch(0, ones(d), ones(d), ones(d), ones(d), ones(d), ones(d), ones(d_mlp))

    def test_ones_identity(self):
        br = self._branch()
        k, v, f = ia3_forward(torch.tensor([1.0, 2.0]), torch.tensor([3.0, 4.0]), torch.tensor([1.0, 1.0, 1.0]), br)
        assert torch.equal(k, torch.tensor([1.0, 2.0]))
        assert torch.equal(v, torch.tensor([3.0, 4.0]))
        assert torch.equal(f, torch.tensor([1.0, 1.0, 1.0]))

    def test_elementwise_product(self):
        br = self._branch()
        br.l_k_self.copy_(torch.tensor([0.5, 2.0]))
        k, _, _ = ia3_forward(torch.tensor([1.0, 2.0]), torch.ones(2), torch.ones(3), br)
        assert torch.allclose(k, torch.tensor([0.5, 4.0]))

    def test_zero_values_annihilate(self):
        br = self._branch()
        br.l_v_self.zero_()
        _, v, _ = ia3_forward(torch.ones(2), torch.tensor([3.0, 4.0]), torch.ones(3), br)
        assert torch.equal(v, torch.zeros(2))

    def test_length_mismatch(self):
        br = self._branch()
        with pytest.raises(ShapeError):
            ia3_forward(torch.ones(5), torch.ones(2), torch.ones(3), br)


class TestAdapterOp:
    def test_identity_at_zero_up(self):
        blk = AdapterBlock(0, W_down=torch.randn(1, 2), b_down=torch.zeros(1),
                           W_up=torch.zeros(2, 1), b_up=torch.zeros(2))
        x = torch.randn(2)
        assert torch.equal(adapter_forward(x, blk), x)

    def test_hand_computed_gelu(self):
        blk = AdapterBlock(0, W_down=torch.tensor([[1.0, 0.0]]), b_down=torch.zeros(1),
                           W_up=torch.tensor([[1.0], [0.0]]), b_up=torch.zeros(2))
        out = adapter_forward(torch.tensor([1.0, 0.0]), blk)
        gelu1 = 0.5 * (1.0 + math.erf(1.0 / math.sqrt(2.0)))  # exact-erf GELU(1)
        assert torch.allclose(out, torch.tensor([1.0 + gelu1, 0.0]), atol=1e-6)
        assert abs(gelu1 - 0.84134) < 1e-5

    def test_nonlinearity(self):
        blk = AdapterBlock(0, W_down=torch.tensor([[1.0, 0.0]]), b_down=torch.zeros(1),
                           W_up=torch.tensor([[1.0], [0.0]]), b_up=torch.zeros(2))
        x = torch.tensor([1.0, 0.0])
        assert not torch.allclose(adapter_forward(2 * x, blk), 2 * adapter_forward(x, blk))


class TestInjectPrompts:
    def _bank(self, m_tok, m_img, d=8):
        return PromptBank(
            tokens_tok=torch.randn(m_tok, d), tokens_img=torch.randn(m_img, d),
            gate_tok=torch.zeros(()), gate_img=torch.zeros(()),
        )

    def test_lengths_and_strip_plan(self):
        bank = self._bank(4, 2)
        tok, img, plan = inject_prompts(torch.randn(6, 8), torch.randn(10, 8), bank, torch.zeros(8))
        assert tok.shape == (10, 8)
        assert img.shape == (12, 8)
        assert plan.token_positions == (0, 1, 2, 3)
        assert plan.image_positions == (0, 1)

    def test_empty_bank_returns_unchanged(self):
        bank = self._bank(0, 0)
        t0, i0 = torch.randn(6, 8), torch.randn(10, 8)
        tok, img, plan = inject_prompts(t0, i0, bank, torch.zeros(8))
        assert torch.equal(tok, t0) and torch.equal(img, i0)
        assert plan.token_positions == () and plan.image_positions == ()

    def test_gate_zero_decode_identity(self, tiny_cfg, tiny_weights):
        grid, seq = _scene(tiny_cfg, tiny_weights)
        cfg = tiny_peft_config(enable_lora=False, enable_ia3=False, enable_adapter=False)
        state = attach(cfg, tiny_cfg, tiny_weights)
        base = decode(grid, seq, tiny_cfg, tiny_weights)
        with_prompts = decode(grid, seq, tiny_cfg, tiny_weights, peft=state)
        assert (base.logits - with_prompts.logits).abs().max() < 1e-5


class TestAttach:
    def test_identity_at_init_all_techniques(self, tiny_cfg, tiny_weights):
        grid, seq = _scene(tiny_cfg, tiny_weights)
        state = attach(tiny_peft_config(), tiny_cfg, tiny_weights)
        base = decode(grid, seq, tiny_cfg, tiny_weights)
        out = decode(grid, seq, tiny_cfg, tiny_weights, peft=state)
        assert (base.logits - out.logits).abs().max() < 1e-5
        assert (base.iou_pred - out.iou_pred).abs().max() < 1e-5

    def test_base_untouched(self, tiny_cfg, tiny_weights):
        before = weights_hash(tiny_weights)
        attach(tiny_peft_config(), tiny_cfg, tiny_weights)
        assert weights_hash(tiny_weights) == before

    def test_unmatched_pattern(self, tiny_cfg, tiny_weights):
        cfg = tiny_peft_config(lora_targets=("*.nonexistent",))
        with pytest.raises(TargetResolutionError) as exc:
            attach(cfg, tiny_cfg, tiny_weights)
        assert "q_proj" in str(exc.value)  # lists available paths

    def test_bottleneck_too_large(self, tiny_cfg, tiny_weights):
        with pytest.raises(ShapeError):
            attach(tiny_peft_config(adapter_bottleneck=32), tiny_cfg, tiny_weights)

    def test_compositionality_single_technique_matches_gated_ensemble(self, tiny_cfg, tiny_weights):
        # disabling a technique == ensemble with that technique at init values
        grid, seq = _scene(tiny_cfg, tiny_weights, seed=3)
        full = attach(tiny_peft_config(seed=11), tiny_cfg, tiny_weights)
        # push lora away from init; keep everything else at init
        for br in full.lora.values():
            br.B.normal_(0.0, 0.05, generator=torch.Generator().manual_seed(1))
        lora_only = attach(tiny_peft_config(seed=11, enable_ia3=False, enable_prompts=False, enable_adapter=False), tiny_cfg, tiny_weights)
        for (ba, bb) in zip(lora_only.lora.values(), full.lora.values()):
            ba.A.data.copy_(bb.A)
            ba.B.data.copy_(bb.B)
        a = decode(grid, seq, tiny_cfg, tiny_weights, peft=full)
        b = decode(grid, seq, tiny_cfg, tiny_weights, peft=lora_only)
        assert (a.logits - b.logits).abs().max() < 1e-5

    def test_random_configs_identity(self, tiny_cfg, tiny_weights, make_random_config):
        grid, seq = _scene(tiny_cfg, tiny_weights, seed=5)
        base = decode(grid, seq, tiny_cfg, tiny_weights)
        rng = np.random.default_rng(123)
        for _ in range(10):
            state = attach(make_random_config(rng), tiny_cfg, tiny_weights)
            out = decode(grid, seq, tiny_cfg, tiny_weights, peft=state)
            assert (base.logits - out.logits).abs().max() < 1e-5


class TestCounts:
    def test_single_lora_branch_formula(self, tiny_cfg, tiny_weights):
        cfg256 = DecoderConfig(d=256, depth=1, heads=8, d_down=128, d_mlp=512, n_mask_tokens=1, upscale=4)
        w = init_decoder_weights(cfg256, d_enc=32, seed=0)
        pcfg = EPEFTConfig(
            enable_ia3=False, enable_prompts=False, enable_adapter=False,
            lora_rank=4, lora_targets=("blocks.0.self_attn.q_proj",),
        )
        state = attach(pcfg, cfg256, w)
        counts = count_trainable(state)
        assert counts["lora"] == 4 * (256 + 256) == 2048
        assert counts["total"] == sum(t.numel() for _, t in state.named_arrays())

    def test_ia3_per_block_formula(self):
        cfg = DecoderConfig(d=256, depth=1, heads=8, d_down=128, d_mlp=2048, n_mask_tokens=1, upscale=4)
        w = init_decoder_weights(cfg, d_enc=32, seed=0)
        pcfg = EPEFTConfig(enable_lora=False, enable_prompts=False, enable_adapter=False)
        state = attach(pcfg, cfg, w)
        counts = count_trainable(state)
        # one (l_k, l_v) pair per attention unit plus l_ff
        assert counts["ia3"] == 2 * 256 + 4 * 128 + 2048
        assert counts["total"] == sum(t.numel() for _, t in state.named_arrays())

    def test_counts_match_enumeration_many_configs(self, tiny_cfg, tiny_weights, make_random_config):
        rng = np.random.default_rng(7)
        for _ in range(50):
            state = attach(make_random_config(rng), tiny_cfg, tiny_weights)
            counts = count_trainable(state)
            assert counts["total"] == sum(t.numel() for _, t in state.named_arrays())

    def test_sam_scale_default_total_in_range(self):
        cfg = DecoderConfig()
        w = init_decoder_weights(cfg, d_enc=32, seed=0)
        state = attach(EPEFTConfig(), cfg, w)
        total = count_trainable(state)["total"]
        assert 100_000 <= total <= 400_000


class TestMerge:
    def _lora_state(self, tiny_cfg, tiny_weights, noisy=True, seed=3):
        cfg = tiny_peft_config(enable_ia3=False, enable_prompts=False, enable_adapter=False, seed=seed)
        state = attach(cfg, tiny_cfg, tiny_weights)
        if noisy:
            gen = torch.Generator().manual_seed(seed)
            for br in state.lora.values():
                br.B.normal_(0.0, 0.05, generator=gen)
        return state

    def test_merge_unmerge_restores(self, tiny_cfg, tiny_weights):
        state = self._lora_state(tiny_cfg, tiny_weights)
        merged = merge_lora(state, tiny_weights)
        restored = unmerge_lora(state, merged)
        diff = max((restored[k] - tiny_weights[k]).abs().max().item() for k in tiny_weights)
        assert diff < 1e-6

    def test_merge_zero_B_identical(self, tiny_cfg, tiny_weights):
        state = self._lora_state(tiny_cfg, tiny_weights, noisy=False)
        merged = merge_lora(state, tiny_weights)
        for k in tiny_weights:
            assert torch.equal(merged[k], tiny_weights[k])

    def test_merged_decode_equals_branch_decode(self, tiny_cfg, tiny_weights):
        grid, seq = _scene(tiny_cfg, tiny_weights, seed=9)
        state = self._lora_state(tiny_cfg, tiny_weights)
        with_branches = decode(grid, seq, tiny_cfg, tiny_weights, peft=state)
        merged = merge_lora(state, tiny_weights)
        merged_out = decode(grid, seq, tiny_cfg, merged, peft=state)  # branches skipped once merged
        assert (with_branches.logits - merged_out.logits).abs().max() < 1e-4

    def test_double_merge_raises(self, tiny_cfg, tiny_weights):
        state = self._lora_state(tiny_cfg, tiny_weights)
        merge_lora(state, tiny_weights)
        with pytest.raises(MergeStateError):
            merge_lora(state, tiny_weights)

    def test_unmerge_before_merge_raises(self, tiny_cfg, tiny_weights):
        state = self._lora_state(tiny_cfg, tiny_weights)
        with pytest.raises(MergeStateError):
            unmerge_lora(state, tiny_weights)
