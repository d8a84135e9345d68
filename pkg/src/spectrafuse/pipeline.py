"""End-to-end segmentation over a bundle: per-window graph distillation and
attention forward, image-level text handling, stitching, and the run report.

All per-window work is pure, so windows can be processed by a thread pool;
results are reduced in window-index order and are therefore independent of
the thread count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bundle import Bundle, build_gram_graph
from .errors import InvalidAlpha, InvalidEpsilon, InvalidEta, InvalidGamma, InvalidN
from .fusion import FusedAttention, attention_forward, fuse, project_features
from .matching import MATCHING_MODES, match_heads
from .segmentation import (
    LabelMap,
    LogitsMap,
    argmax_labels,
    patch_text_similarity,
    refine_with_prior,
    stitch_windows,
    upsample_logits,
)
from .spectral import tailor_vfm_graph
from .text import adjust_text_embeddings, build_prompt_groups, presence_prior, ward_cluster

# Fixed behavior every run report echoes, so outputs are auditable without
# reading the source.
PIPELINE_CONVENTIONS = {
    "gram": "per-head K K^T, symmetrized (M + M^T)/2",
    "rank_energy_denominator": "trace of the head graph",
    "eigenvector_sign": "first nonzero component positive",
    "signature_normalization": "L1 over clamped top-m eigenvalues",
    "assignment_tie_break": "lexicographically smallest permutation",
    "softmax": "per-row max subtraction after dividing by sqrt(D_h)",
    "layernorm_eps": 1e-5,
    "feature_rows": "L2-normalized",
    "upsampling": "bilinear, align-corners-false",
    "stitching": "arithmetic mean over covering windows, window-index order",
    "argmax_tie_break": "lowest class index",
}


@dataclass
class RunConfig:
    """Knobs of the segmentation pipeline, defaults per the reference setting."""

    alpha: float = 0.03  # text-embedding adjustment strength
    gamma: float = 0.10  # patch-text vs global-prior blend
    eta: float = 0.9  # cumulative-energy threshold for rank selection
    epsilon: float = 1.5  # dynamic eigenscaling amplification
    m: int | None = None  # signature length; None means head count
    n: int = 16  # top-n patches guiding text adjustment
    cluster_threshold: float = 0.6  # ward dendrogram cut height
    matching: str = "complementary"
    use_vfm: bool = True
    use_tailoring: bool = True
    use_prior_similarity: bool = True  # object-perspective similarity blend
    use_text_adjustment: bool = True  # object-guided text adjustment
    threads: int | None = None  # None: one worker per logical core

    def validate(self) -> None:
        if not (0.0 <= self.alpha <= 1.0):
            raise InvalidAlpha(f"alpha must be in [0, 1], got {self.alpha}")
        if not (0.0 <= self.gamma <= 1.0):
            raise InvalidGamma(f"gamma must be in [0, 1], got {self.gamma}")
        if not (0.0 < self.eta <= 1.0):
            raise InvalidEta(f"eta must be in (0, 1], got {self.eta}")
        if not (1.0 < self.epsilon < 2.0):
            raise InvalidEpsilon(f"epsilon must be in (1, 2), got {self.epsilon}")
        if self.m is not None and self.m < 1:
            raise ValueError(f"m must be positive, got {self.m}")
        if self.n < 1:
            raise InvalidN(f"n must be positive, got {self.n}")
        if self.cluster_threshold < 0.0:
            raise ValueError(f"cluster_threshold must be >= 0, got {self.cluster_threshold}")
        if self.matching not in MATCHING_MODES:
            raise ValueError(f"matching must be one of {MATCHING_MODES}, got {self.matching!r}")

    def to_dict(self) -> dict:
        # threads is an execution parameter, not configuration: outputs are
        # contractually identical for any thread count, so it never enters
        # the report
        return {
            "alpha": self.alpha,
            "gamma": self.gamma,
            "eta": self.eta,
            "epsilon": self.epsilon,
            "m": self.m,
            "n": self.n,
            "cluster_threshold": self.cluster_threshold,
            "matching": self.matching,
            "use_vfm": self.use_vfm,
            "use_tailoring": self.use_tailoring,
            "use_prior_similarity": self.use_prior_similarity,
            "use_text_adjustment": self.use_text_adjustment,
        }


@dataclass
class SegmentationResult:
    logits: LogitsMap
    labels: LabelMap
    report: dict = field(default_factory=dict)


def _window_logits(bundle: Bundle, config: RunConfig, window_index: int, text_ctx) -> tuple:
    """Compute upsampled window logits plus diagnostics for one window."""
    window = bundle.windows[window_index]
    prior, groups = text_ctx
    a_clip = build_gram_graph(window.k_clip)
    diagnostics: dict = {"window": window_index, "origin_xy": list(window.origin_xy)}

    if config.use_vfm:
        a_vfm = build_gram_graph(window.k_vfm)
        m = config.m if config.m is not None else bundle.h
        assignment = match_heads(a_vfm, a_clip, m=m, mode=config.matching)
        tailored = np.empty_like(a_vfm)
        ranks = []
        for i in range(bundle.h):
            if config.use_tailoring:
                tailored[i], selection = tailor_vfm_graph(a_vfm[i], config.eta, config.epsilon)
                ranks.append(
                    {"head": i, "k": selection.k, "energy_fraction": selection.energy_fraction}
                )
            else:
                tailored[i] = a_vfm[i]
        fused = fuse(tailored, a_clip, assignment)
        diagnostics["head_pairs"] = [list(p) for p in assignment.pairs]
        diagnostics["pair_weights"] = [float(w) for w in assignment.weights]
        diagnostics["rank_selections"] = ranks
    else:
        fused = FusedAttention(graphs=a_clip)

    z_star = attention_forward(fused, window.v_clip, bundle.w_o)
    features = project_features(z_star, bundle.post_ln_scale, bundle.post_ln_bias, bundle.proj)

    text = np.asarray(bundle.text_embeddings, dtype=np.float64)
    if config.use_text_adjustment:
        text = adjust_text_embeddings(text, groups, prior, features, config.n, config.alpha)
    scores = patch_text_similarity(features, text)
    if config.use_prior_similarity:
        scores = refine_with_prior(scores, text, bundle.cls_embedding, config.gamma)

    gh, gw = bundle.grid_hw
    patch_logits = scores.reshape(gh, gw, bundle.n_classes)
    up = upsample_logits(patch_logits, (bundle.window_size, bundle.window_size))
    return up, window.origin_xy, diagnostics


def segment_bundle(bundle: Bundle, config: RunConfig | None = None) -> SegmentationResult:
    """Run the full pipeline on a loaded bundle."""
    config = config or RunConfig()
    config.validate()
    if config.n > bundle.n_patches:
        raise InvalidN(f"n={config.n} exceeds the {bundle.n_patches} patches per window")
    if config.m is not None and config.m > bundle.n_patches:
        raise ValueError(f"m={config.m} exceeds the {bundle.n_patches} patches per window")

    prior = presence_prior(bundle.text_embeddings, bundle.cls_embedding)
    clusters = ward_cluster(bundle.text_embeddings, config.cluster_threshold)
    groups = build_prompt_groups(clusters, prior)
    text_ctx = (prior, groups)

    workers = config.threads if config.threads else (os.cpu_count() or 1)
    indices = range(len(bundle.windows))
    if workers > 1 and len(bundle.windows) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_window_logits, bundle, config, i, text_ctx) for i in indices
            ]
            results = [f.result() for f in futures]
    else:
        results = [_window_logits(bundle, config, i, text_ctx) for i in indices]

    logits = stitch_windows([(up, origin) for up, origin, _ in results], bundle.image_size_hw)
    labels = argmax_labels(logits)
    report = {
        "config": config.to_dict(),
        "conventions": PIPELINE_CONVENTIONS,
        "class_names": list(bundle.class_names),
        "image_size_hw": list(bundle.image_size_hw),
        "presence_prior": [float(s) for s in prior.scores],
        "prompt_groups": [
            {"indices": list(g.index_set), "winner": g.winner} for g in groups
        ],
        "windows": [diag for _, _, diag in results],
    }
    return SegmentationResult(logits=logits, labels=labels, report=report)
