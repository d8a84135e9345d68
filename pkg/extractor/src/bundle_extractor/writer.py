"""Writer for the bundle directory format consumed by the segmentation core.

The format is the integration contract between the two packages: a
manifest.json (sorted keys) declaring dimensions, class names, tensor shapes
and window records, next to raw row-major little-endian f32 files with no
header. Writing is byte-deterministic.
"""

from __future__ import annotations

import json
import os

import numpy as np

BUNDLE_VERSION = 1


def _tensor_entry(name: str, shape: tuple[int, ...]) -> dict:
    return {
        "name": name,
        "shape": list(shape),
        "dtype": "f32",
        "byte_order": "little-endian",
        "file": f"{name}.bin",
    }


def write_bundle_dir(
    out_dir: str,
    *,
    image_size_hw: tuple[int, int],
    window_size: int,
    stride: int,
    grid_hw: tuple[int, int],
    class_names: list[str],
    globals_: dict[str, np.ndarray],
    windows: list[dict],
) -> str:
    """Write manifest + tensor files; returns out_dir.

    `globals_` must carry w_o, post_ln_scale, post_ln_bias, proj,
    text_embeddings, cls_embedding. Each entry of `windows` has origin_xy
    plus k_vfm / k_clip / v_clip arrays of shape [h, N, D_h].
    """
    heads, n_patches, head_dim = windows[0]["k_clip"].shape
    manifest = {
        "version": BUNDLE_VERSION,
        "image_size_hw": list(image_size_hw),
        "window_size": window_size,
        "stride": stride,
        "h": heads,
        "N": n_patches,
        "D_h": head_dim,
        "d": int(globals_["text_embeddings"].shape[1]),
        "C": int(globals_["text_embeddings"].shape[0]),
        "grid_hw": list(grid_hw),
        "class_names": list(class_names),
        "tensors": [],
        "windows": [],
    }
    arrays: dict[str, np.ndarray] = {}
    for name in ("w_o", "post_ln_scale", "post_ln_bias", "proj", "text_embeddings", "cls_embedding"):
        arr = np.ascontiguousarray(globals_[name], dtype="<f4")
        manifest["tensors"].append(_tensor_entry(name, arr.shape))
        arrays[name] = arr
    for idx, window in enumerate(windows):
        record = {"origin_xy": [int(window["origin_xy"][0]), int(window["origin_xy"][1])]}
        for tname in ("k_vfm", "k_clip", "v_clip"):
            full = f"win{idx:03d}_{tname}"
            arr = np.ascontiguousarray(window[tname], dtype="<f4")
            manifest["tensors"].append(_tensor_entry(full, arr.shape))
            arrays[full] = arr
            record[tname] = full
        manifest["windows"].append(record)

    os.makedirs(out_dir, exist_ok=True)
    for name, arr in arrays.items():
        with open(os.path.join(out_dir, f"{name}.bin"), "wb") as fh:
            fh.write(arr.tobytes())
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return out_dir
