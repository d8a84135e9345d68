"""CLI: dump one image into a bundle directory.

    extract --image photo.jpg --classes classes.json --out bundle_dir \
        [--clip openai/clip-vit-base-patch16] [--vfm facebook/dino-vitb8] \
        [--short-side 336] [--window-size 224] [--stride 112]
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import ExtractorError
from .extract import ExtractionRequest, extract_bundle


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="extract", description=__doc__)
    parser.add_argument("--image", required=True, help="input image file")
    parser.add_argument("--classes", required=True, help="JSON list of class prompts")
    parser.add_argument("--out", required=True, help="output bundle directory")
    parser.add_argument("--clip", default="openai/clip-vit-base-patch16")
    parser.add_argument("--vfm", default="facebook/dino-vitb8")
    parser.add_argument("--short-side", dest="short_side", type=int, default=336)
    parser.add_argument("--window-size", dest="window_size", type=int, default=224)
    parser.add_argument("--stride", type=int, default=112)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        with open(args.classes, encoding="utf-8") as fh:
            prompts = json.load(fh)
        if not isinstance(prompts, list) or not all(isinstance(p, str) for p in prompts):
            raise ValueError("classes file must hold a JSON list of strings")
        request = ExtractionRequest(
            image_path=args.image,
            class_prompts=prompts,
            clip_model_id=args.clip,
            vfm_model_id=args.vfm,
            window_size=args.window_size,
            stride=args.stride,
            short_side_resize=args.short_side,
        )
        extract_bundle(request, args.out)
    except (ExtractorError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
