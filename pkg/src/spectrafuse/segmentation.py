"""Patch-text similarity, prior-guided refinement, window stitching, label
extraction, metrics, and the PGM/JSON output format.

Metrics are computed in exact rational arithmetic over integer pixel counts
and rounded to float once, so hand-counted fixtures hold to the last bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import CoverageGap, InvalidGamma, ShapeMismatch
from .fusion import VisualFeatures
from .text import _ensure_unit_rows


@dataclass
class LogitsMap:
    values: np.ndarray  # [H, W, C]
    counts: np.ndarray  # [H, W], covering-window counts


@dataclass
class LabelMap:
    labels: np.ndarray  # [H, W] int


@dataclass
class EvalReport:
    per_class_iou: list  # length C; None for classes absent from pred and gt
    miou: float
    pacc: float

    def to_dict(self) -> dict:
        return {"per_class_iou": self.per_class_iou, "miou": self.miou, "pacc": self.pacc}


def patch_text_similarity(features: VisualFeatures, text: np.ndarray) -> np.ndarray:
    """Scores S[p, c] = <feature row p, text row c>."""
    text = np.asarray(text, dtype=np.float64)
    if text.ndim != 2 or text.shape[1] != features.rows.shape[1]:
        raise ShapeMismatch(
            f"text {text.shape} does not share d with features {features.rows.shape}"
        )
    return features.rows @ text.T


def refine_with_prior(
    s_hat: np.ndarray, text: np.ndarray, cls: np.ndarray, gamma: float
) -> np.ndarray:
    """Blend patch-text scores with the global text-vs-image score vector."""
    if not (0.0 <= gamma <= 1.0):
        raise InvalidGamma(f"gamma must be in [0, 1], got {gamma}")
    s_hat = np.asarray(s_hat, dtype=np.float64)
    if gamma == 0.0:
        return s_hat.copy()
    text = np.asarray(text, dtype=np.float64)
    cls = _ensure_unit_rows(np.asarray(cls, dtype=np.float64)[None, :])[0]
    if text.shape[0] != s_hat.shape[1] or text.shape[1] != cls.shape[0]:
        raise ShapeMismatch(f"text {text.shape} incompatible with scores {s_hat.shape}")
    global_scores = text @ cls
    return (1.0 - gamma) * s_hat + gamma * global_scores[None, :]


def upsample_logits(patch_logits: np.ndarray, window_hw: tuple[int, int]) -> np.ndarray:
    """Bilinear patch-to-pixel upsampling, align-corners-false convention.

    Source coordinates are (i + 0.5) / out * grid - 0.5, clamped to the grid.
    """
    patch_logits = np.asarray(patch_logits, dtype=np.float64)
    gh, gw, _ = patch_logits.shape
    out_h, out_w = window_hw
    ys = np.clip((np.arange(out_h) + 0.5) / out_h * gh - 0.5, 0.0, gh - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) / out_w * gw - 0.5, 0.0, gw - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, gh - 1)
    x1 = np.minimum(x0 + 1, gw - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    v00 = patch_logits[y0][:, x0]
    v01 = patch_logits[y0][:, x1]
    v10 = patch_logits[y1][:, x0]
    v11 = patch_logits[y1][:, x1]
    top = (1.0 - fx) * v00 + fx * v01
    bottom = (1.0 - fx) * v10 + fx * v11
    return (1.0 - fy) * top + fy * bottom


def stitch_windows(
    window_logits: list[tuple[np.ndarray, tuple[int, int]]], image_size_hw: tuple[int, int]
) -> LogitsMap:
    """Average overlapping window logits per pixel, in window-list order."""
    if not window_logits:
        raise CoverageGap("no windows to stitch")
    h, w = image_size_hw
    c = window_logits[0][0].shape[2]
    acc = np.zeros((h, w, c), dtype=np.float64)
    counts = np.zeros((h, w), dtype=np.int64)
    for logits, (x, y) in window_logits:
        wh, ww, wc = logits.shape
        if wc != c:
            raise ShapeMismatch("windows disagree on class count")
        if y + wh > h or x + ww > w or x < 0 or y < 0:
            raise ShapeMismatch(f"window at {(x, y)} of size {(wh, ww)} exceeds the image")
        acc[y : y + wh, x : x + ww] += logits
        counts[y : y + wh, x : x + ww] += 1
    if (counts == 0).any():
        raise CoverageGap("stitched windows leave uncovered pixels")
    return LogitsMap(values=acc / counts[:, :, None], counts=counts)


def argmax_labels(logits: LogitsMap) -> LabelMap:
    """Per-pixel argmax, ties to the lowest class index."""
    return LabelMap(labels=np.argmax(logits.values, axis=2).astype(np.int64))


def _as_labels(x) -> np.ndarray:
    if isinstance(x, LabelMap):
        return x.labels
    return np.asarray(x)


def evaluate(pred, gt, n_classes: int | None = None, ignore_index: int | None = None) -> EvalReport:
    """Per-class IoU, mean IoU over classes present anywhere, pixel accuracy.

    Pixels whose ground-truth label equals `ignore_index` are excluded from
    every count. Arithmetic is exact (integer counts, rational reductions).
    """
    pred = _as_labels(pred)
    gt = _as_labels(gt)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    valid = np.ones(gt.shape, dtype=bool)
    if ignore_index is not None:
        valid = gt != ignore_index
    p = pred[valid]
    g = gt[valid]
    if n_classes is None:
        n_classes = int(max(p.max(initial=-1), g.max(initial=-1))) + 1
    ious: list = []
    fractions = []
    for c in range(n_classes):
        pc = p == c
        gc = g == c
        inter = int(np.count_nonzero(pc & gc))
        union = int(np.count_nonzero(pc | gc))
        if union == 0:
            ious.append(None)
        else:
            frac = Fraction(inter, union)
            fractions.append(frac)
            ious.append(float(frac))
    miou = float(sum(fractions) / len(fractions)) if fractions else 0.0
    total = int(p.size)
    correct = int(np.count_nonzero(p == g))
    pacc = float(Fraction(correct, total)) if total else 0.0
    return EvalReport(per_class_iou=ious, miou=miou, pacc=pacc)


def write_label_pgm(labels, path: str) -> None:
    """Binary PGM (P5, maxval 255), one byte per pixel holding the class index."""
    arr = _as_labels(labels)
    if arr.ndim != 2:
        raise ShapeMismatch(f"label map must be 2-D, got shape {arr.shape}")
    if arr.min(initial=0) < 0 or arr.max(initial=0) > 255:
        raise ValueError("PGM label maps support at most 256 classes (indices 0..255)")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.astype(np.uint8).tobytes())


def read_label_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM label map")
    w, h = (int(v) for v in parts[1].split())
    if parts[2] != b"255":
        raise ValueError(f"{path}: expected maxval 255")
    pixels = np.frombuffer(parts[3][: w * h], dtype=np.uint8)
    if pixels.size != w * h:
        raise ValueError(f"{path}: truncated pixel data")
    return pixels.reshape(h, w).astype(np.int64)
