#!/usr/bin/env python3
"""Construct and freeze the golden two-object synthetic bundle.

The bundle carries a block-structured foundation-model graph (two patch
blocks: a minority object on the left edge, a majority object elsewhere),
a noisy CLIP graph, and two orthogonal class embeddings. The script verifies
with its own independent implementation (scipy assignment, explicit loops)
that:

  * the vanilla path (CLIP graph only, no prior blending, no text
    adjustment) mislabels a large share of the minority object's pixels;
  * the full pipeline with default settings labels almost all pixels of
    both objects correctly.

Only when both hold with margin does it write the fixture files:

  tests/data/golden_bundle/   the bundle
  tests/data/golden_gt.pgm    ground-truth label map
  tests/data/golden_meta.json frozen seeds, rates, and thresholds

Run `--freeze-label` afterwards (or in the same invocation) to record the
packaged pipeline's label map as tests/data/golden_label.pgm.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np
from scipy.optimize import linear_sum_assignment

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from spectrafuse.bundle import Bundle, Window, write_bundle  # noqa: E402
from spectrafuse.segmentation import write_label_pgm  # noqa: E402

WINDOW = 48
STRIDE = 24
IMAGE_HW = (48, 72)
GRID = 6
N = GRID * GRID
H_HEADS = 4
D_HEAD = 16
D_JOINT = 8
CLASS_NAMES = ["object-a", "object-b"]
MINORITY_X_LIMIT = 16  # pixels with x < 16 belong to object-b

ETA = 0.9
EPSILON = 1.5
ALPHA = 0.03
GAMMA = 0.10
TOP_N = 16
CLUSTER_THRESHOLD = 0.6

# freeze margins: stricter than the acceptance thresholds (0.20 / 0.95)
NEED_VANILLA_MISLABEL = 0.30
NEED_FULL_CORRECT = 0.99


def ground_truth() -> np.ndarray:
    gt = np.zeros(IMAGE_HW, dtype=np.int64)
    gt[:, :MINORITY_X_LIMIT] = 1
    return gt


def window_origins() -> list[tuple[int, int]]:
    return [(0, 0), (24, 0)]


def patch_objects(origin_x: int) -> np.ndarray:
    """Object id per patch (row-major grid) for a window at origin_x."""
    ids = np.zeros(N, dtype=np.int64)
    for r in range(GRID):
        for c in range(GRID):
            px_center = origin_x + c * (WINDOW // GRID) + (WINDOW // GRID) // 2
            ids[r * GRID + c] = 1 if px_center < MINORITY_X_LIMIT else 0
    return ids


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def build_bundle(seed: int, clip_key_scale: float, value_noise: float) -> tuple[Bundle, dict]:
    rng = np.random.default_rng(seed)
    # Key norms large enough that block affinity survives eigenscale damping,
    # the fusion weight w/(w+1), and the sqrt(D_h) softmax temperature, and
    # distinct per head so head pairings never sit on a near-tie.
    vfm_scales = [9.0, 10.0, 11.0, 12.0]
    vfm_noise = 0.2

    # per-head orthonormal object directions for VFM keys and for values
    u_dirs = []  # [head][object] in R^{D_HEAD}
    q_dirs = np.zeros((2, H_HEADS * D_HEAD))
    for i in range(H_HEADS):
        basis = np.linalg.qr(rng.normal(size=(D_HEAD, 2)))[0].T
        u_dirs.append([basis[0], basis[1]])
        qa, qb = np.linalg.qr(rng.normal(size=(D_HEAD, 2)))[0].T
        q_dirs[0, i * D_HEAD : (i + 1) * D_HEAD] = qa
        q_dirs[1, i * D_HEAD : (i + 1) * D_HEAD] = qb
    q_dirs[0] = _unit(q_dirs[0])
    q_dirs[1] = _unit(q_dirs[1] - (q_dirs[1] @ q_dirs[0]) * q_dirs[0])

    w_o = np.linalg.qr(rng.normal(size=(H_HEADS * D_HEAD, H_HEADS * D_HEAD)))[0]
    ln_scale = 1.0 + 0.1 * rng.uniform(-1.0, 1.0, size=H_HEADS * D_HEAD)
    ln_bias = 0.05 * rng.uniform(-1.0, 1.0, size=H_HEADS * D_HEAD)

    def pre_projection(row64: np.ndarray) -> np.ndarray:
        z = row64 @ w_o
        mu = z.mean()
        var = ((z - mu) ** 2).mean()
        zn = (z - mu) / np.sqrt(var + 1e-5)
        return zn * ln_scale + ln_bias

    # Choose the projection so the two class prototypes land exactly on an
    # orthonormal pair in joint space: without this, a random projection can
    # leave class B's own text embedding closer to class A's feature
    # direction than to its own.
    e_pair = np.linalg.qr(rng.normal(size=(D_JOINT, 2)))[0]  # columns e0, e1
    g = np.stack([pre_projection(q_dirs[0]), pre_projection(q_dirs[1])], axis=1)  # 64 x 2
    target = 3.0 * e_pair.T  # rows: images of g_a, g_b under proj
    g_pinv = g @ np.linalg.inv(g.T @ g)  # 64 x 2
    residual_proj = np.eye(H_HEADS * D_HEAD) - g_pinv @ g.T
    proj = g_pinv @ target + residual_proj @ (
        rng.normal(size=(H_HEADS * D_HEAD, D_JOINT)) / np.sqrt(H_HEADS * D_HEAD)
    )

    t_a = e_pair[:, 0]
    t_b = e_pair[:, 1]
    text = np.stack([t_a, t_b])
    cls = _unit(t_a + 0.9 * t_b)

    windows = []
    for origin in window_origins():
        objects = patch_objects(origin[0])
        k_vfm = np.zeros((H_HEADS, N, D_HEAD))
        k_clip = rng.normal(scale=clip_key_scale, size=(H_HEADS, N, D_HEAD))
        v_clip = np.zeros((H_HEADS, N, D_HEAD))
        for i in range(H_HEADS):
            for p in range(N):
                obj = objects[p]
                k_vfm[i, p] = vfm_scales[i] * u_dirs[i][obj] + vfm_noise * rng.normal(size=D_HEAD)
                v_clip[i, p] = q_dirs[obj][i * D_HEAD : (i + 1) * D_HEAD] + value_noise * rng.normal(
                    size=D_HEAD
                )
        windows.append(
            Window(
                origin_xy=origin,
                k_vfm=k_vfm.astype(np.float32),
                k_clip=k_clip.astype(np.float32),
                v_clip=v_clip.astype(np.float32),
            )
        )

    bundle = Bundle(
        image_size_hw=IMAGE_HW,
        window_size=WINDOW,
        stride=STRIDE,
        h=H_HEADS,
        n_patches=N,
        d_head=D_HEAD,
        d_joint=D_JOINT,
        n_classes=2,
        grid_hw=(GRID, GRID),
        class_names=CLASS_NAMES,
        w_o=w_o.astype(np.float32),
        post_ln_scale=ln_scale.astype(np.float32),
        post_ln_bias=ln_bias.astype(np.float32),
        proj=proj.astype(np.float32),
        text_embeddings=text.astype(np.float32),
        cls_embedding=cls.astype(np.float32),
        windows=windows,
    )
    params = {"seed": seed, "clip_key_scale": clip_key_scale, "value_noise": value_noise}
    return bundle, params


# --- independent reference implementation (loops + scipy), used only to
# --- verify the fixture before freezing

def _ref_softmax_rows(x):
    out = np.empty_like(x)
    for r in range(x.shape[0]):
        row = x[r] - x[r].max()
        e = np.exp(row)
        out[r] = e / e.sum()
    return out


def _ref_gram(keys):
    k = keys.astype(np.float64)
    out = np.empty((k.shape[0], k.shape[1], k.shape[1]))
    for i in range(k.shape[0]):
        m = k[i] @ k[i].T
        out[i] = (m + m.T) / 2.0
    return out


def _ref_features(graphs, v_clip, bundle):
    per_head = []
    for j in range(bundle.h):
        m = _ref_softmax_rows(graphs[j] / np.sqrt(float(bundle.d_head)))
        per_head.append(m @ v_clip[j].astype(np.float64))
    z = np.concatenate(per_head, axis=1) @ bundle.w_o.astype(np.float64)
    scale = bundle.post_ln_scale.astype(np.float64)
    bias = bundle.post_ln_bias.astype(np.float64)
    proj = bundle.proj.astype(np.float64)
    rows = np.empty((z.shape[0], proj.shape[1]))
    for p in range(z.shape[0]):
        mu = z[p].mean()
        var = ((z[p] - mu) ** 2).mean()
        zn = (z[p] - mu) / np.sqrt(var + 1e-5)
        f = (zn * scale + bias) @ proj
        norm = np.linalg.norm(f)
        rows[p] = f / norm if norm > 0 else f
    return rows


def _ref_upsample(patch_logits, out_hw):
    gh, gw, c = patch_logits.shape
    oh, ow = out_hw
    out = np.empty((oh, ow, c))
    for yy in range(oh):
        sy = min(max((yy + 0.5) / oh * gh - 0.5, 0.0), gh - 1.0)
        y0 = int(np.floor(sy))
        y1 = min(y0 + 1, gh - 1)
        fy = sy - y0
        for xx in range(ow):
            sx = min(max((xx + 0.5) / ow * gw - 0.5, 0.0), gw - 1.0)
            x0 = int(np.floor(sx))
            x1 = min(x0 + 1, gw - 1)
            fx = sx - x0
            top = (1.0 - fx) * patch_logits[y0, x0] + fx * patch_logits[y0, x1]
            bottom = (1.0 - fx) * patch_logits[y1, x0] + fx * patch_logits[y1, x1]
            out[yy, xx] = (1.0 - fy) * top + fy * bottom
    return out


def _ref_tailor(a, eta, eps):
    vals, vecs = np.linalg.eigh(a)
    vals = vals[::-1].copy()
    vecs = vecs[:, ::-1].copy()
    vals = np.maximum(vals, 0.0)
    trace = float(np.trace(a))
    cum = np.cumsum(vals) / trace
    k = int(np.nonzero(cum >= eta)[0][0]) + 1 if (cum >= eta).any() else vals.size
    top = vals[:k]
    smin, smax = top.min(), top.max()
    if smax - smin < 1e-9 * max(smax, 1.0):
        scaled = top
    else:
        rng_ = eps * smax - (2.0 - eps) * smin
        scaled = (top - smin) / (smax - smin) * rng_ + (2.0 - eps) * smin
    u = vecs[:, :k]
    out = (u * scaled) @ u.T
    return (out + out.T) / 2.0


def _ref_signature(a, m):
    vals = np.linalg.eigvalsh(a)[::-1][:m]
    vals = np.maximum(vals, 0.0)
    s = vals.sum()
    vals = np.full(m, 1.0 / m) if s == 0 else vals / s
    return np.sort(vals)


def reference_labels(bundle: Bundle, full: bool) -> np.ndarray:
    text = bundle.text_embeddings.astype(np.float64)
    cls = bundle.cls_embedding.astype(np.float64)
    prior = text @ cls
    acc = np.zeros(IMAGE_HW + (2,))
    counts = np.zeros(IMAGE_HW, dtype=np.int64)
    for window in bundle.windows:
        a_clip = _ref_gram(window.k_clip)
        if full:
            a_vfm = _ref_gram(window.k_vfm)
            sig_v = [_ref_signature(a_vfm[i], bundle.h) for i in range(bundle.h)]
            sig_c = [_ref_signature(a_clip[j], bundle.h) for j in range(bundle.h)]
            cost = np.array(
                [[1.0 - np.abs(sv - sc).sum() for sc in sig_c] for sv in sig_v]
            )
            rows, cols = linear_sum_assignment(cost)
            graphs = np.empty_like(a_clip)
            for i, j in zip(rows, cols):
                w = np.abs(sig_v[i] - sig_c[j]).sum()
                tailored = _ref_tailor(a_vfm[i], ETA, EPSILON)
                graphs[j] = (w * tailored + a_clip[j]) / (w + 1.0)
        else:
            graphs = a_clip
        feats = _ref_features(graphs, window.v_clip, bundle)
        text_used = text
        if full:
            # orthogonal classes sit above the cluster cut: singleton groups,
            # each class its own winner
            text_used = text.copy()
            for c in range(2):
                sims = feats @ text[c]
                top = np.argsort(-sims, kind="stable")[:TOP_N]
                mu = feats[top].mean(axis=0)
                text_used[c] = _unit((1.0 - ALPHA) * text[c] + ALPHA * mu)
        scores = feats @ text_used.T
        if full:
            scores = (1.0 - GAMMA) * scores + GAMMA * (text_used @ cls)[None, :]
        up = _ref_upsample(scores.reshape(GRID, GRID, 2), (WINDOW, WINDOW))
        x, y = window.origin_xy
        acc[y : y + WINDOW, x : x + WINDOW] += up
        counts[y : y + WINDOW, x : x + WINDOW] += 1
    assert (counts > 0).all()
    return np.argmax(acc / counts[:, :, None], axis=2)


def _rates(vanilla: np.ndarray, full: np.ndarray) -> dict:
    gt = ground_truth()
    minority = gt == 1
    majority = gt == 0
    return {
        "vanilla_minority_mislabel": float((vanilla[minority] != 1).mean()),
        "full_correct_minority": float((full[minority] == 1).mean()),
        "full_correct_majority": float((full[majority] == 0).mean()),
    }


def measure(bundle: Bundle) -> dict:
    """Rates from this script's independent implementation."""
    return _rates(reference_labels(bundle, full=False), reference_labels(bundle, full=True))


def measure_package(bundle: Bundle) -> dict:
    """Rates from the packaged pipeline (what the acceptance suite asserts)."""
    from spectrafuse.pipeline import RunConfig, segment_bundle

    full = segment_bundle(bundle, RunConfig()).labels.labels
    vanilla = segment_bundle(
        bundle, RunConfig(use_vfm=False, alpha=0.0, gamma=0.0)
    ).labels.labels
    return _rates(vanilla, full)


def _meets(rates: dict) -> bool:
    return (
        rates["vanilla_minority_mislabel"] >= NEED_VANILLA_MISLABEL
        and rates["full_correct_minority"] >= NEED_FULL_CORRECT
        and rates["full_correct_majority"] >= NEED_FULL_CORRECT
    )


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "tests", "data"))
    parser.add_argument("--freeze-label", action="store_true", help="also freeze the packaged pipeline's label map")
    args = parser.parse_args()

    candidates = [
        (seed, scale, noise)
        for seed in (20240811, 7, 99, 1234, 42)
        for scale in (0.5, 0.6, 0.4)
        for noise in (0.6, 0.8, 0.5)
    ]
    chosen = None
    for seed, scale, noise in candidates:
        bundle, params = build_bundle(seed, scale, noise)
        rates = measure(bundle)
        if not _meets(rates):
            print(f"candidate {params}: reference {rates} rejected")
            continue
        pkg_rates = measure_package(bundle)
        ok = _meets(pkg_rates)
        print(
            f"candidate {params}: reference {rates} package {pkg_rates} "
            f"{'OK' if ok else 'rejected'}"
        )
        if ok:
            chosen = (bundle, params, rates, pkg_rates)
            break
    if chosen is None:
        print("no candidate satisfied the freeze margins", file=sys.stderr)
        return 1

    bundle, params, rates, pkg_rates = chosen
    out = os.path.abspath(args.out)
    os.makedirs(out, exist_ok=True)
    bundle_dir = os.path.join(out, "golden_bundle")
    write_bundle(bundle, bundle_dir)
    write_label_pgm(ground_truth(), os.path.join(out, "golden_gt.pgm"))
    meta = {
        "params": params,
        "measured_reference": rates,
        "measured_package": pkg_rates,
        "thresholds": {"vanilla_minority_mislabel": 0.20, "full_correct_each_object": 0.95},
        "defaults": {
            "alpha": ALPHA,
            "gamma": GAMMA,
            "eta": ETA,
            "epsilon": EPSILON,
            "n": TOP_N,
            "cluster_threshold": CLUSTER_THRESHOLD,
        },
    }
    with open(os.path.join(out, "golden_meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"frozen bundle at {bundle_dir}")

    if args.freeze_label:
        from spectrafuse.bundle import read_bundle
        from spectrafuse.pipeline import RunConfig, segment_bundle

        result = segment_bundle(read_bundle(bundle_dir), RunConfig())
        write_label_pgm(result.labels, os.path.join(out, "golden_label.pgm"))
        print("frozen packaged-pipeline label map")
    return 0


if __name__ == "__main__":
    sys.exit(main())
