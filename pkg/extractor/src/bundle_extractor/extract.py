"""End-to-end bundle extraction: image -> resized window grid -> per-window
final-block tensors from both encoders -> grid alignment -> bundle directory.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatch, ImageDecodeFailure
from .models import (
    EncoderPair,
    capture_clip_window,
    capture_vfm_window,
    clip_global_tensors,
    clip_image_embedding,
    load_encoder_pair,
)
from .text import encode_prompts
from .writer import write_bundle_dir


@dataclass
class ExtractionRequest:
    image_path: str
    class_prompts: list[str]
    clip_model_id: str = "openai/clip-vit-base-patch16"
    vfm_model_id: str = "facebook/dino-vitb8"
    window_size: int = 224
    stride: int = 112
    short_side_resize: int = 336  # 560 for high-resolution street scenes

    def validate(self, pair: EncoderPair) -> None:
        if not self.class_prompts:
            raise ValueError("class_prompts must be nonempty")
        if self.window_size < 1 or self.stride < 1:
            raise ValueError("window_size and stride must be positive")
        if self.short_side_resize < self.window_size:
            raise ValueError("short_side_resize must be at least window_size")
        if self.window_size % pair.clip_patch != 0:
            raise GridMismatch(
                f"window {self.window_size} not divisible by CLIP patch {pair.clip_patch}"
            )
        if self.window_size % pair.vfm_patch != 0:
            raise GridMismatch(
                f"window {self.window_size} not divisible by VFM patch {pair.vfm_patch}"
            )
        vfm_grid = self.window_size // pair.vfm_patch
        clip_grid = self.window_size // pair.clip_patch
        if vfm_grid % clip_grid != 0:
            raise GridMismatch(
                f"VFM grid {vfm_grid} is not an integer multiple of CLIP grid {clip_grid}"
            )


def align_vfm_grid(keys: np.ndarray, src_grid: tuple[int, int], dst_grid: tuple[int, int]) -> np.ndarray:
    """Mean-pool per-head key vectors from a finer patch grid onto a coarser one.

    Pooling is non-overlapping over each (ratio x ratio) block, so the
    per-head mean key vector is preserved exactly.
    """
    keys = np.asarray(keys)
    heads, n, dim = keys.shape
    sh, sw = src_grid
    dh, dw = dst_grid
    if sh * sw != n:
        raise GridMismatch(f"source grid {src_grid} does not match {n} tokens")
    if sh % dh != 0 or sw % dw != 0:
        raise GridMismatch(f"source grid {src_grid} is not an integer multiple of {dst_grid}")
    rh, rw = sh // dh, sw // dw
    grid = keys.reshape(heads, dh, rh, dw, rw, dim)
    return grid.mean(axis=(2, 4)).reshape(heads, dh * dw, dim)


def window_origins(length: int, window: int, stride: int) -> list[int]:
    """Stride positions clamped so the final window touches the far edge."""
    xs = list(range(0, length - window + 1, stride))
    if not xs or xs[-1] != length - window:
        xs.append(length - window)
    return xs


def _load_image(path: str):
    from PIL import Image

    try:
        return Image.open(path).convert("RGB")
    except Exception as exc:
        raise ImageDecodeFailure(f"cannot decode {path!r}: {exc}") from exc


def _resize_short_side(image, short: int):
    w, h = image.size
    if h <= w:
        new_h, new_w = short, max(short, round(w * short / h))
    else:
        new_w, new_h = short, max(short, round(h * short / w))
    from PIL import Image

    return image.resize((new_w, new_h), Image.BICUBIC)


def _to_normalized_tensor(image, mean, std):
    import torch

    arr = np.asarray(image, dtype=np.float32) / 255.0
    arr = (arr - np.asarray(mean, dtype=np.float32)) / np.asarray(std, dtype=np.float32)
    return torch.from_numpy(arr.transpose(2, 0, 1))[None]


def extract_bundle(
    request: ExtractionRequest, out_dir: str, pair: EncoderPair | None = None
) -> str:
    """Produce a bundle directory for one image; returns out_dir.

    `pair` may be injected (tests use tiny randomly initialized encoders);
    by default the checkpoints named in the request are loaded.
    """
    if pair is None:
        pair = load_encoder_pair(request.clip_model_id, request.vfm_model_id)
    request.validate(pair)

    image = _load_image(request.image_path)
    resized = _resize_short_side(image, request.short_side_resize)
    width, height = resized.size
    clip_pixels = _to_normalized_tensor(resized, *pair.clip_norm)
    vfm_pixels = _to_normalized_tensor(resized, *pair.vfm_norm)

    win = request.window_size
    clip_grid = win // pair.clip_patch
    vfm_grid = win // pair.vfm_patch
    windows = []
    for y in window_origins(height, win, request.stride):
        for x in window_origins(width, win, request.stride):
            k_clip, v_clip = capture_clip_window(pair, clip_pixels[:, :, y : y + win, x : x + win])
            k_vfm_native = capture_vfm_window(pair, vfm_pixels[:, :, y : y + win, x : x + win])
            k_vfm = align_vfm_grid(
                k_vfm_native, (vfm_grid, vfm_grid), (clip_grid, clip_grid)
            ).astype(np.float32)
            windows.append(
                {"origin_xy": (x, y), "k_vfm": k_vfm, "k_clip": k_clip, "v_clip": v_clip}
            )

    text_embeddings, text_meta = encode_prompts(request.class_prompts, pair.text_encoder)

    from PIL import Image

    square = resized.resize((pair.clip_native_size, pair.clip_native_size), Image.BICUBIC)
    cls_embedding = clip_image_embedding(pair, _to_normalized_tensor(square, *pair.clip_norm))

    globals_ = clip_global_tensors(pair)
    globals_["text_embeddings"] = text_embeddings
    globals_["cls_embedding"] = cls_embedding

    write_bundle_dir(
        out_dir,
        image_size_hw=(height, width),
        window_size=win,
        stride=request.stride,
        grid_hw=(clip_grid, clip_grid),
        class_names=list(request.class_prompts),
        globals_=globals_,
        windows=windows,
    )
    meta = {
        "source_image": os.path.abspath(request.image_path),
        "clip_model_id": request.clip_model_id,
        "vfm_model_id": request.vfm_model_id,
        "short_side_resize": request.short_side_resize,
        "vfm_native_grid": [vfm_grid, vfm_grid],
        **text_meta,
    }
    with open(os.path.join(out_dir, "extraction.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    return out_dir
