"""Model loading and final-block tensor capture for the two frozen encoders.

Keys and values are taken from the last transformer block's key/value
projections (their inputs are the block's pre-attention layer norm output),
captured with forward hooks during an ordinary full forward pass. The [CLS]
token is dropped; remaining tokens are split into heads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ModelLoadFailure
from .text import HFClipTextEncoder, TextEncoder

OPENAI_CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
OPENAI_CLIP_STD = (0.26862954, 0.26130258, 0.27577711)
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass
class EncoderPair:
    """Everything extraction needs from the two loaded encoders."""

    clip_model: object
    vfm_model: object
    text_encoder: TextEncoder
    clip_patch: int
    vfm_patch: int
    clip_native_size: int
    heads: int
    head_dim: int
    joint_dim: int
    clip_norm: tuple = (OPENAI_CLIP_MEAN, OPENAI_CLIP_STD)
    vfm_norm: tuple = (IMAGENET_MEAN, IMAGENET_STD)


def _vision_layers(model):
    enc = model.vision_model
    if hasattr(enc, "encoder"):
        return enc.encoder.layers
    return enc.layers


def _vit_layers(model):
    if hasattr(model, "layers"):
        return model.layers
    return model.encoder.layer


def _kv_linears(attn):
    if hasattr(attn, "k_proj"):
        return attn.k_proj, attn.v_proj
    return attn.attention.key, attn.attention.value


def _attn_of_vit_layer(layer):
    return layer.attention


def clip_final_attention(clip_model):
    return _vision_layers(clip_model)[-1].self_attn


def clip_out_proj(clip_model):
    attn = clip_final_attention(clip_model)
    return attn.out_proj if hasattr(attn, "out_proj") else attn.o_proj


def build_encoder_pair(clip_model, vfm_model, text_encoder) -> EncoderPair:
    """Wrap loaded models, validating that their head layouts agree."""
    vision_cfg = clip_model.config.vision_config
    vfm_cfg = vfm_model.config
    heads = vision_cfg.num_attention_heads
    head_dim = vision_cfg.hidden_size // heads
    vfm_head_dim = vfm_cfg.hidden_size // vfm_cfg.num_attention_heads
    if vfm_cfg.num_attention_heads != heads or vfm_head_dim != head_dim:
        raise ModelLoadFailure(
            f"encoder head layouts differ: CLIP {heads}x{head_dim}, "
            f"VFM {vfm_cfg.num_attention_heads}x{vfm_head_dim}"
        )
    return EncoderPair(
        clip_model=clip_model,
        vfm_model=vfm_model,
        text_encoder=text_encoder,
        clip_patch=vision_cfg.patch_size,
        vfm_patch=vfm_cfg.patch_size,
        clip_native_size=vision_cfg.image_size,
        heads=heads,
        head_dim=head_dim,
        joint_dim=clip_model.config.projection_dim,
    )


def load_encoder_pair(clip_model_id: str, vfm_model_id: str, device="cpu") -> EncoderPair:
    """Load the frozen checkpoints from local cache or the hub."""
    try:
        import torch  # noqa: F401
        from transformers import AutoTokenizer, CLIPModel, ViTModel
    except ImportError as exc:
        raise ModelLoadFailure(f"torch/transformers unavailable: {exc}") from exc
    try:
        clip_model = CLIPModel.from_pretrained(clip_model_id).to(device).eval()
        tokenizer = AutoTokenizer.from_pretrained(clip_model_id)
        vfm_model = ViTModel.from_pretrained(vfm_model_id, add_pooling_layer=False)
        vfm_model = vfm_model.to(device).eval()
    except Exception as exc:
        raise ModelLoadFailure(
            f"cannot load {clip_model_id!r} / {vfm_model_id!r}: {exc}"
        ) from exc
    text_encoder = HFClipTextEncoder(clip_model, tokenizer, device=device)
    return build_encoder_pair(clip_model, vfm_model, text_encoder)


def _split_heads(flat, heads: int, head_dim: int) -> np.ndarray:
    """[1, T, h*D_h] -> [h, T-1, D_h], dropping the [CLS] token."""
    t = flat.shape[1]
    arr = flat.reshape(t, heads, head_dim).transpose(1, 0, 2)
    return np.ascontiguousarray(arr[:, 1:, :])


def capture_clip_window(pair: EncoderPair, pixels) -> tuple[np.ndarray, np.ndarray]:
    """Run one window through the CLIP vision tower; return final-block K and V
    as [h, N, D_h] float32."""
    import torch

    attn = clip_final_attention(pair.clip_model)
    k_lin, v_lin = _kv_linears(attn)
    captured = {}
    handles = [
        k_lin.register_forward_hook(lambda m, i, o: captured.__setitem__("k", o.detach())),
        v_lin.register_forward_hook(lambda m, i, o: captured.__setitem__("v", o.detach())),
    ]
    try:
        interpolate = pixels.shape[-1] != pair.clip_native_size
        with torch.no_grad():
            pair.clip_model.vision_model(
                pixel_values=pixels, interpolate_pos_encoding=interpolate
            )
    finally:
        for h in handles:
            h.remove()
    k = captured["k"].cpu().numpy().astype(np.float32)
    v = captured["v"].cpu().numpy().astype(np.float32)
    return (
        _split_heads(k, pair.heads, pair.head_dim),
        _split_heads(v, pair.heads, pair.head_dim),
    )


def capture_vfm_window(pair: EncoderPair, pixels) -> np.ndarray:
    """Run one window through the VFM; return final-block keys [h, N, D_h]."""
    import torch

    attn = _attn_of_vit_layer(_vit_layers(pair.vfm_model)[-1])
    k_lin, _ = _kv_linears(attn)
    captured = {}
    handle = k_lin.register_forward_hook(lambda m, i, o: captured.__setitem__("k", o.detach()))
    try:
        native = pair.vfm_model.config.image_size
        with torch.no_grad():
            pair.vfm_model(
                pixel_values=pixels, interpolate_pos_encoding=pixels.shape[-1] != native
            )
    finally:
        handle.remove()
    k = captured["k"].cpu().numpy().astype(np.float32)
    return _split_heads(k, pair.heads, pair.head_dim)


def clip_global_tensors(pair: EncoderPair) -> dict[str, np.ndarray]:
    """Output projection, final layer norm affine, and joint projection.

    The attention output bias is not part of the bundle contract and is
    dropped; both segmentation paths share this convention.
    """
    model = pair.clip_model
    out_proj = clip_out_proj(model)
    vision = model.vision_model
    post_ln = vision.post_layernorm if hasattr(vision, "post_layernorm") else vision.layernorm
    return {
        "w_o": out_proj.weight.detach().cpu().numpy().T.astype(np.float32),
        "post_ln_scale": post_ln.weight.detach().cpu().numpy().astype(np.float32),
        "post_ln_bias": post_ln.bias.detach().cpu().numpy().astype(np.float32),
        "proj": model.visual_projection.weight.detach().cpu().numpy().T.astype(np.float32),
    }


def clip_image_embedding(pair: EncoderPair, pixels) -> np.ndarray:
    """Projected, L2-normalized [CLS] embedding of the full image."""
    import torch

    model = pair.clip_model
    with torch.no_grad():
        out = model.vision_model(
            pixel_values=pixels,
            interpolate_pos_encoding=pixels.shape[-1] != pair.clip_native_size,
        )
        embed = model.visual_projection(out.pooler_output)
    vec = embed[0].cpu().numpy().astype(np.float64)
    norm = np.linalg.norm(vec)
    if norm > 0:
        vec = vec / norm
    return vec.astype(np.float32)
