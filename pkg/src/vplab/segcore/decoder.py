"""Functional two-way transformer mask decoder.

``decode`` is a pure function of (feature grid, prompt tokens, config,
weights, optional PEFT state). Per block it runs token self-attention,
token→image cross-attention at the downsampled width, an MLP, and
image→token cross-attention; a final token→image attention feeds a
hypernetwork mask head over the upscaled image embedding.

PEFT deltas are applied in place in the dataflow: LoRA branches add to
matched linear layers, IA3 vectors rescale projected keys/values and inner
MLP activations, injected memory tokens are prepended to both input
sequences with their key contributions multiplied by a learned gate (zero at
init, so a fresh state reproduces the base model), and bottleneck adapters
run after each block MLP. Injected rows are stripped before the mask head.
"""

from __future__ import annotations

import math
from typing import TYPE_CHECKING, Optional

import torch
import torch.nn.functional as F

from vplab.errors import NumericalError, ShapeError
from vplab.segcore.positional import grid_pe
from vplab.segcore.types import DecoderConfig, FeatureGrid, MaskLogits
from vplab.segcore.weights import upscale_stages

if TYPE_CHECKING:
    from vplab.peft.state import EPEFTState


def _linear(x, weights, path, lora):
    y = x @ weights[f"{path}.weight"].t() + weights[f"{path}.bias"]
    if lora is not None and path in lora:
        br = lora[path]
        dtype = x.dtype
        y = y + (br.alpha / br.rank) * ((x @ br.A.to(dtype).t()) @ br.B.to(dtype).t())
    return y


def _attention(q_in, k_in, v_in, weights, prefix, heads, lora, kv_scale=None, key_gate=None):
    """Multi-head attention with optional IA3 key/value scaling and gated keys.

    ``key_gate`` is a per-key multiplier applied to the exponentiated scores
    before normalization; a gate of zero removes those keys from the softmax
    entirely, which is what gives injected memory tokens an exact
    no-contribution initialization.
    """
    q = _linear(q_in, weights, f"{prefix}.q_proj", lora)
    k = _linear(k_in, weights, f"{prefix}.k_proj", lora)
    v = _linear(v_in, weights, f"{prefix}.v_proj", lora)
    if kv_scale is not None:
        l_k, l_v = kv_scale
        k = k * l_k.to(k.dtype)
        v = v * l_v.to(v.dtype)
    lq, internal = q.shape
    lk = k.shape[0]
    dh = internal // heads
    q = q.reshape(lq, heads, dh).permute(1, 0, 2)
    k = k.reshape(lk, heads, dh).permute(1, 0, 2)
    v = v.reshape(lk, heads, dh).permute(1, 0, 2)
    scores = (q @ k.transpose(-2, -1)) / math.sqrt(dh)
    scores = scores - scores.max(dim=-1, keepdim=True).values.detach()
    exp = torch.exp(scores)
    if key_gate is not None:
        exp = exp * key_gate.to(exp.dtype)
    attn = exp / exp.sum(dim=-1, keepdim=True)
    out = (attn @ v).permute(1, 0, 2).reshape(lq, internal)
    return _linear(out, weights, f"{prefix}.out_proj", lora)


def _layer_norm(x, weights, path):
    return F.layer_norm(
        x, (x.shape[-1],), weights[f"{path}.weight"], weights[f"{path}.bias"]
    )


def _layer_norm_2d(x, weight, bias):
    # channel-wise LayerNorm over (1, C, H, W)
    u = x.mean(dim=1, keepdim=True)
    s = ((x - u) ** 2).mean(dim=1, keepdim=True)
    x = (x - u) / torch.sqrt(s + 1e-6)
    return x * weight[:, None, None] + bias[:, None, None]


def _mlp3(x, weights, prefix, lora):
    h = F.relu(_linear(x, weights, f"{prefix}.lin0", lora))
    h = F.relu(_linear(h, weights, f"{prefix}.lin1", lora))
    return _linear(h, weights, f"{prefix}.lin2", lora)


def _check_finite(stage: str, *tensors):
    for t in tensors:
        if not torch.isfinite(t).all():
            raise NumericalError(f"non-finite values after {stage}")


def decode(
    grid: FeatureGrid,
    prompts: torch.Tensor,
    cfg: DecoderConfig,
    weights: dict[str, torch.Tensor],
    peft: Optional["EPEFTState"] = None,
) -> MaskLogits:
    """Run the two-way decoder over one feature grid.

    ``prompts`` is an (n, d) token sequence from ``encode_points``. Returns
    mask logits of shape (n_mask_tokens, h*upscale, w*upscale) and a per-slot
    IoU estimate in [0, 1]. The weight mapping is never mutated.
    """
    dtype = weights["input_proj.weight"].dtype
    h, w = grid.h, grid.w
    d_enc = weights["input_proj.weight"].shape[1]
    if grid.d != d_enc:
        raise ShapeError(f"grid width {grid.d} does not match input projection ({d_enc})")
    if prompts.ndim != 2 or prompts.shape[1] != cfg.d:
        raise ShapeError(
            f"prompt tokens must be (n, {cfg.d}), got {tuple(prompts.shape)}"
        )

    feats = grid.features.reshape(h * w, d_enc).to(dtype)
    image_seq = _linear(feats, weights, "input_proj", None)
    mean_feat = image_seq.mean(dim=0)

    base_tokens = torch.cat(
        [weights["iou_token"], weights["mask_tokens"], prompts.to(dtype)], dim=0
    )

    lora = None
    bank = None
    cond = None
    m_tok = m_img = 0
    if peft is not None:
        lora = peft.lora if (peft.lora and not peft.merged) else None
        bank = peft.prompts
        cond = peft.cond
        if bank is not None:
            m_tok, m_img = bank.m_tok, bank.m_img

    if bank is not None and (m_tok > 0 or m_img > 0):
        from vplab.peft.ops import inject_prompts

        token_seq, image_seq, _plan = inject_prompts(base_tokens, image_seq, bank, mean_feat, cond)
        kg_tok = kg_img = None
        if m_tok > 0:
            kg_tok = torch.cat(
                [bank.gate_tok.to(dtype).reshape(1).expand(m_tok), torch.ones(base_tokens.shape[0], dtype=dtype)]
            )
        if m_img > 0:
            kg_img = torch.cat(
                [bank.gate_img.to(dtype).reshape(1).expand(m_img), torch.ones(h * w, dtype=dtype)]
            )
    else:
        bank = None
        token_seq = base_tokens
        kg_tok = kg_img = None

    query_pe = token_seq
    image_pe = grid_pe(h, w, cfg.d, dtype=dtype)
    if m_img > 0:
        image_pe = torch.cat([torch.zeros(m_img, cfg.d, dtype=dtype), image_pe], dim=0)

    for i in range(cfg.depth):
        prefix = f"blocks.{i}"
        ia3 = peft.ia3_for(i) if peft is not None else None
        if bank is not None and bank.deep and i > 0 and m_tok > 0:
            from vplab.peft.ops import conditioned_tokens

            fresh = conditioned_tokens(bank, "tok", i, cond, mean_feat, dtype)
            token_seq = torch.cat([fresh, token_seq[m_tok:]], dim=0)

        if i == 0:
            token_seq = _attention(
                token_seq, token_seq, token_seq, weights, f"{prefix}.self_attn",
                cfg.heads, lora, kv_scale=ia3 and ia3.kv("self_attn"), key_gate=kg_tok,
            )
        else:
            q = token_seq + query_pe
            token_seq = token_seq + _attention(
                q, q, token_seq, weights, f"{prefix}.self_attn",
                cfg.heads, lora, kv_scale=ia3 and ia3.kv("self_attn"), key_gate=kg_tok,
            )
        token_seq = _layer_norm(token_seq, weights, f"{prefix}.norm1")

        q = token_seq + query_pe
        k = image_seq + image_pe
        token_seq = token_seq + _attention(
            q, k, image_seq, weights, f"{prefix}.cross_token_to_image",
            cfg.heads, lora, kv_scale=ia3 and ia3.kv("cross_token_to_image"), key_gate=kg_img,
        )
        token_seq = _layer_norm(token_seq, weights, f"{prefix}.norm2")

        inner = F.relu(_linear(token_seq, weights, f"{prefix}.mlp.lin1", lora))
        if ia3 is not None:
            inner = inner * ia3.l_ff.to(dtype)
        token_seq = token_seq + _linear(inner, weights, f"{prefix}.mlp.lin2", lora)
        token_seq = _layer_norm(token_seq, weights, f"{prefix}.norm3")

        adapter = peft.adapter_for(i) if peft is not None else None
        if adapter is not None:
            from vplab.peft.ops import adapter_forward

            token_seq = adapter_forward(token_seq, adapter)

        q = token_seq + query_pe
        k = image_seq + image_pe
        image_seq = image_seq + _attention(
            k, q, token_seq, weights, f"{prefix}.cross_image_to_token",
            cfg.heads, lora, kv_scale=ia3 and ia3.kv("cross_image_to_token"), key_gate=kg_tok,
        )
        image_seq = _layer_norm(image_seq, weights, f"{prefix}.norm4")
        _check_finite(f"block {i}", token_seq, image_seq)

    q = token_seq + query_pe
    k = image_seq + image_pe
    token_seq = token_seq + _attention(
        q, k, image_seq, weights, "final_attn", cfg.heads, lora, key_gate=kg_img
    )
    token_seq = _layer_norm(token_seq, weights, "final_norm")
    _check_finite("final attention", token_seq)

    # drop injected rows before the mask head
    token_seq = token_seq[m_tok:]
    image_out = image_seq[m_img:]

    iou_out = token_seq[0]
    mask_outs = token_seq[1 : 1 + cfg.n_mask_tokens]

    img = image_out.reshape(h, w, cfg.d).permute(2, 0, 1).unsqueeze(0)
    stages = upscale_stages(cfg)
    if not stages:
        img = F.gelu(F.conv2d(img, weights["upscale.proj.weight"], weights["upscale.proj.bias"]))
    for j in range(len(stages)):
        img = F.conv_transpose2d(
            img, weights[f"upscale.deconv{j}.weight"], weights[f"upscale.deconv{j}.bias"], stride=2
        )
        if j < len(stages) - 1:
            img = _layer_norm_2d(img, weights[f"upscale.ln{j}.weight"], weights[f"upscale.ln{j}.bias"])
        img = F.gelu(img)
    up = img.squeeze(0)  # (d//8, h*up, w*up)
    c, hh, ww = up.shape

    hyper = torch.stack(
        [_mlp3(mask_outs[t], weights, f"hyper_mlps.{t}", lora) for t in range(cfg.n_mask_tokens)]
    )
    logits = (hyper @ up.reshape(c, hh * ww)).reshape(cfg.n_mask_tokens, hh, ww)
    iou_pred = torch.sigmoid(_mlp3(iou_out, weights, "iou_head", lora))
    _check_finite("mask head", logits, iou_pred)
    return MaskLogits(logits=logits, iou_pred=iou_pred)
