#!/usr/bin/env python3
"""Directional smoke test on real checkpoints: over a handful of images with
ground-truth masks, the full pipeline's mean mIoU must strictly exceed the
vanilla path's (no graph distillation, no priors).

Requires CLIP ViT-B/16 and DINO ViT-B/8 weights (hub or local cache) and a
data directory laid out as:

    data/
      classes.json          JSON list of class prompts (index = mask value)
      img1.jpg  img1.png    image + palette/index mask pairs (same stem)
      ...

Mask pixels equal to 255 are ignored. Example:

    python scripts/smoke_directional.py --data voc_subset --work /tmp/smoke
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import subprocess
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from bundle_extractor.extract import ExtractionRequest, extract_bundle  # noqa: E402
from bundle_extractor.models import load_encoder_pair  # noqa: E402

VANILLA_FLAGS = ["--no-vfm", "--alpha", "0", "--gamma", "0"]


def _mask_to_pgm(mask_path: str, out_path: str) -> None:
    from PIL import Image

    mask = np.asarray(Image.open(mask_path))
    if mask.ndim != 2:
        raise SystemExit(f"{mask_path}: expected a palette/index mask")
    if mask.max() > 255:
        raise SystemExit(f"{mask_path}: index values exceed one byte")
    h, w = mask.shape
    with open(out_path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(mask.astype(np.uint8).tobytes())


def _resize_mask_pgm(mask_path: str, size_hw, out_path: str) -> None:
    from PIL import Image

    mask = Image.open(mask_path)
    resized = mask.resize((size_hw[1], size_hw[0]), Image.NEAREST)
    arr = np.asarray(resized)
    with open(out_path, "wb") as fh:
        fh.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii"))
        fh.write(arr.astype(np.uint8).tobytes())


def _run(cmd: list[str]) -> str:
    result = subprocess.run(cmd, capture_output=True, text=True)
    if result.returncode != 0:
        raise SystemExit(f"command failed ({result.returncode}): {' '.join(cmd)}\n{result.stderr}")
    return result.stdout


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--data", required=True, help="directory of image/mask pairs + classes.json")
    parser.add_argument("--work", required=True, help="scratch directory")
    parser.add_argument("--clip", default="openai/clip-vit-base-patch16")
    parser.add_argument("--vfm", default="facebook/dino-vitb8")
    parser.add_argument("--short-side", type=int, default=336)
    parser.add_argument("--min-images", type=int, default=5)
    args = parser.parse_args()

    classes_path = os.path.join(args.data, "classes.json")
    with open(classes_path, encoding="utf-8") as fh:
        class_names = json.load(fh)
    images = sorted(
        p
        for p in glob.glob(os.path.join(args.data, "*"))
        if p.lower().endswith((".jpg", ".jpeg"))
        or (p.lower().endswith(".png") and not os.path.exists(os.path.splitext(p)[0] + ".jpg"))
    )
    pairs = []
    for img in images:
        stem = os.path.splitext(img)[0]
        mask = stem + ".png" if not img.lower().endswith(".png") else stem + "_mask.png"
        if os.path.exists(mask) and mask != img:
            pairs.append((img, mask))
    if len(pairs) < args.min_images:
        raise SystemExit(f"need at least {args.min_images} image/mask pairs, found {len(pairs)}")

    print(f"loading {args.clip} and {args.vfm} ...")
    encoder_pair = load_encoder_pair(args.clip, args.vfm)

    os.makedirs(args.work, exist_ok=True)
    scores = {"full": [], "vanilla": []}
    for idx, (img, mask) in enumerate(pairs):
        tag = f"{idx:03d}"
        bundle = os.path.join(args.work, f"bundle_{tag}")
        request = ExtractionRequest(
            image_path=img,
            class_prompts=class_names,
            clip_model_id=args.clip,
            vfm_model_id=args.vfm,
            short_side_resize=args.short_side,
        )
        extract_bundle(request, bundle, pair=encoder_pair)
        manifest = json.load(open(os.path.join(bundle, "manifest.json")))
        gt_pgm = os.path.join(args.work, f"gt_{tag}.pgm")
        _resize_mask_pgm(mask, manifest["image_size_hw"], gt_pgm)
        for mode, extra in (("full", []), ("vanilla", VANILLA_FLAGS)):
            out = os.path.join(args.work, f"seg_{mode}_{tag}")
            _run(
                [sys.executable, "-m", "spectrafuse.cli", "segment", "--bundle", bundle,
                 "--out", out, *extra]
            )
            payload = json.loads(
                _run(
                    [sys.executable, "-m", "spectrafuse.cli", "eval",
                     "--pred", os.path.join(out, "label_map.pgm"),
                     "--gt", gt_pgm, "--classes", classes_path,
                     "--ignore-index", "255"]
                )
            )
            scores[mode].append(payload["miou"])
            print(f"  {os.path.basename(img)} {mode}: mIoU {payload['miou']:.4f}")

    mean_full = float(np.mean(scores["full"]))
    mean_vanilla = float(np.mean(scores["vanilla"]))
    print(f"\nmean mIoU: full {mean_full:.4f} vs vanilla {mean_vanilla:.4f}")
    if not mean_full > mean_vanilla:
        print("FAIL: full pipeline did not improve on the vanilla path")
        return 1
    print("PASS: full pipeline strictly improves on the vanilla path")
    return 0


if __name__ == "__main__":
    sys.exit(main())
