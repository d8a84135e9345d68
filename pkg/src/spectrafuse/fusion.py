"""Graph distillation and the modified final-block attention forward pass.

The tailored foundation-model graph is blended into each matched CLIP head
graph with its Wasserstein weight, and the blend replaces the CLIP attention
logits in a standard softmax-attention forward: per-head softmax, value
aggregation, head concatenation, output projection, then the encoder's final
layer norm and joint-space projection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFinite, ShapeMismatch
from .matching import HeadAssignment

LAYERNORM_EPS = 1e-5


@dataclass
class FusedAttention:
    graphs: np.ndarray  # [h, N, N], indexed by CLIP head


@dataclass
class VisualFeatures:
    """Joint-embedding patch features, one L2-normalized row per patch.

    Rows that were exactly zero before normalization stay zero and are
    flagged in `zero_rows`.
    """

    rows: np.ndarray  # [N, d]
    zero_rows: np.ndarray  # [N] bool


def distill_graph(a_tailored: np.ndarray, a_clip: np.ndarray, w: float) -> np.ndarray:
    """Convex-style blend (w * tailored + clip) / (w + 1)."""
    a_tailored = np.asarray(a_tailored, dtype=np.float64)
    a_clip = np.asarray(a_clip, dtype=np.float64)
    if a_tailored.shape != a_clip.shape:
        raise ShapeMismatch(f"graph shapes differ: {a_tailored.shape} vs {a_clip.shape}")
    if not (np.isfinite(w) and w >= 0.0):
        raise ValueError(f"weight must be finite and nonnegative, got {w}")
    return (w * a_tailored + a_clip) / (w + 1.0)


def fuse(
    a_vfm_tailored: np.ndarray, a_clip: np.ndarray, assignment: HeadAssignment
) -> FusedAttention:
    """Blend each tailored VFM head into its matched CLIP head."""
    a_vfm_tailored = np.asarray(a_vfm_tailored, dtype=np.float64)
    a_clip = np.asarray(a_clip, dtype=np.float64)
    if a_vfm_tailored.shape != a_clip.shape or a_vfm_tailored.ndim != 3:
        raise ShapeMismatch(
            f"expected matching [h, N, N] stacks, got {a_vfm_tailored.shape} vs {a_clip.shape}"
        )
    h = a_clip.shape[0]
    if sorted(j for _, j in assignment.pairs) != list(range(h)):
        raise ValueError("assignment is not a bijection over heads")
    graphs = np.empty_like(a_clip)
    for (i, j), w in zip(assignment.pairs, assignment.weights):
        graphs[j] = distill_graph(a_vfm_tailored[i], a_clip[j], float(w))
    return FusedAttention(graphs=graphs)


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax with per-row max subtraction."""
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def attention_forward(fused: FusedAttention, v_clip: np.ndarray, w_o: np.ndarray) -> np.ndarray:
    """Modified self-attention: softmax(A/sqrt(D_h)) V per head, concat, times W_O."""
    graphs = fused.graphs
    v = np.asarray(v_clip, dtype=np.float64)
    w_o = np.asarray(w_o, dtype=np.float64)
    if v.ndim != 3 or graphs.shape[0] != v.shape[0] or graphs.shape[1] != v.shape[1]:
        raise ShapeMismatch(f"graphs {graphs.shape} incompatible with values {v.shape}")
    h, n, d_head = v.shape
    if w_o.shape != (h * d_head, h * d_head):
        raise ShapeMismatch(f"w_o has shape {w_o.shape}, expected {(h * d_head, h * d_head)}")
    scale = np.sqrt(float(d_head))
    per_head = []
    for j in range(h):
        m = softmax_rows(graphs[j] / scale)
        per_head.append(m @ v[j])
    z = np.concatenate(per_head, axis=1) @ w_o
    if not np.isfinite(z).all():
        raise NonFinite("attention forward produced non-finite values")
    return z


def project_features(
    z_star: np.ndarray, ln_scale: np.ndarray, ln_bias: np.ndarray, proj: np.ndarray
) -> VisualFeatures:
    """Final layer norm, joint-space projection, and row L2 normalization."""
    z = np.asarray(z_star, dtype=np.float64)
    ln_scale = np.asarray(ln_scale, dtype=np.float64)
    ln_bias = np.asarray(ln_bias, dtype=np.float64)
    proj = np.asarray(proj, dtype=np.float64)
    if z.ndim != 2 or ln_scale.shape != (z.shape[1],) or ln_bias.shape != (z.shape[1],):
        raise ShapeMismatch(f"layernorm parameters do not match features of shape {z.shape}")
    if proj.shape[0] != z.shape[1]:
        raise ShapeMismatch(f"projection {proj.shape} does not match features {z.shape}")
    mean = z.mean(axis=1, keepdims=True)
    var = ((z - mean) ** 2).mean(axis=1, keepdims=True)
    normed = (z - mean) / np.sqrt(var + LAYERNORM_EPS)
    projected = (normed * ln_scale + ln_bias) @ proj
    norms = np.linalg.norm(projected, axis=1)
    zero = norms == 0.0
    safe = np.where(zero, 1.0, norms)
    return VisualFeatures(rows=projected / safe[:, None], zero_rows=zero)
