"""Object presence prior, prompt clustering, and text-embedding adjustment.

The presence prior scores each class prompt against the global image
embedding. Prompts are grouped by Ward-linkage agglomeration over their
pairwise cosine distances; within each group the most likely class is pulled
toward the mean of its best-matching patch features, sharpening the query
toward the object actually present.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidAlpha, InvalidN, ShapeMismatch
from .fusion import VisualFeatures

UNIT_NORM_ATOL = 1e-4


@dataclass
class PresencePrior:
    scores: np.ndarray  # [C], cosine of each text row with the image embedding


@dataclass(frozen=True)
class PromptGroup:
    index_set: tuple[int, ...]
    winner: int


def _ensure_unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.abs(norms - 1.0).max() <= UNIT_NORM_ATOL:
        return x
    safe = np.where(norms == 0.0, 1.0, norms)
    return x / safe


def presence_prior(text: np.ndarray, cls: np.ndarray) -> PresencePrior:
    """Per-class cosine between text embeddings and the global image embedding."""
    text = np.asarray(text, dtype=np.float64)
    cls = np.asarray(cls, dtype=np.float64)
    if text.ndim != 2 or cls.ndim != 1 or text.shape[1] != cls.shape[0]:
        raise ShapeMismatch(f"text {text.shape} incompatible with image embedding {cls.shape}")
    text = _ensure_unit_rows(text)
    cls = _ensure_unit_rows(cls[None, :])[0]
    return PresencePrior(scores=text @ cls)


def cosine_distance_matrix(x: np.ndarray) -> np.ndarray:
    """Symmetric pairwise 1 - cosine similarity with a zero diagonal."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    unit = x / safe
    d = 1.0 - unit @ unit.T
    d = (d + d.T) / 2.0
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def ward_linkage(dist: np.ndarray) -> list[tuple[int, int, float, int]]:
    """Agglomerative Ward merges via the Lance-Williams recurrence.

    Returns (cluster_a, cluster_b, height, new_size) per merge, with new
    clusters numbered C, C+1, ... in merge order. Ties go to the smallest
    (a, b) pair, so the dendrogram is deterministic.
    """
    n = dist.shape[0]
    sizes = {i: 1 for i in range(n)}
    d: dict[tuple[int, int], float] = {}
    for i in range(n):
        for j in range(i + 1, n):
            d[(i, j)] = float(dist[i, j])
    active = list(range(n))
    merges = []
    next_id = n
    while len(active) > 1:
        best = None
        for ai in range(len(active)):
            for aj in range(ai + 1, len(active)):
                i, j = active[ai], active[aj]
                key = (i, j) if i < j else (j, i)
                cur = d[key]
                if best is None or cur < best[0]:
                    best = (cur, key[0], key[1])
        height, i, j = best
        ni, nj = sizes[i], sizes[j]
        new = next_id
        next_id += 1
        sizes[new] = ni + nj
        active.remove(i)
        active.remove(j)
        for k in active:
            nk = sizes[k]
            dki = d[(min(i, k), max(i, k))]
            dkj = d[(min(j, k), max(j, k))]
            total = ni + nj + nk
            d[(min(k, new), max(k, new))] = float(
                np.sqrt(((ni + nk) * dki**2 + (nj + nk) * dkj**2 - nk * height**2) / total)
            )
        active.append(new)
        merges.append((i, j, height, ni + nj))
    return merges


def ward_cluster(text: np.ndarray, threshold: float) -> list[tuple[int, ...]]:
    """Flat prompt clusters: cut the Ward dendrogram at `threshold`.

    Merges whose height is <= threshold are applied; the result partitions
    {0..C-1}. threshold 0 keeps distinct prompts as singletons; +inf gives a
    single cluster.
    """
    text = np.asarray(text, dtype=np.float64)
    if text.ndim != 2 or text.shape[0] < 1:
        raise ShapeMismatch(f"expected [C, d] text embeddings, got {text.shape}")
    if threshold < 0.0:
        raise ValueError(f"threshold must be >= 0, got {threshold}")
    c = text.shape[0]
    if c == 1:
        return [(0,)]
    merges = ward_linkage(cosine_distance_matrix(text))

    parent = list(range(c + len(merges)))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    next_id = c
    for i, j, height, _ in merges:
        if height <= threshold:
            parent[find(i)] = next_id
            parent[find(j)] = next_id
        next_id += 1

    groups: dict[int, list[int]] = {}
    for idx in range(c):
        groups.setdefault(find(idx), []).append(idx)
    return [tuple(sorted(v)) for v in sorted(groups.values(), key=lambda g: g[0])]


def build_prompt_groups(clusters: list[tuple[int, ...]], prior: PresencePrior) -> list[PromptGroup]:
    """Attach the argmax-prior winner to each cluster (lowest index on ties)."""
    out = []
    for index_set in clusters:
        best = index_set[0]
        for idx in index_set[1:]:
            if prior.scores[idx] > prior.scores[best]:
                best = idx
        out.append(PromptGroup(index_set=tuple(index_set), winner=best))
    return out


def adjust_text_embeddings(
    text: np.ndarray,
    groups: list[PromptGroup],
    prior: PresencePrior,
    features: VisualFeatures,
    n: int,
    alpha: float,
) -> np.ndarray:
    """Pull each group's most likely class embedding toward its top-n patches.

    The winner row becomes normalize((1-alpha) t + alpha mean(top-n rows));
    every other row is returned bit-identically. alpha == 0 short-circuits to
    the unmodified input so the vanilla path stays exactly reproducible.
    """
    text = np.asarray(text, dtype=np.float64)
    rows = features.rows
    if not (0.0 <= alpha <= 1.0):
        raise InvalidAlpha(f"alpha must be in [0, 1], got {alpha}")
    if not (1 <= n <= rows.shape[0]):
        raise InvalidN(f"n must be in [1, {rows.shape[0]}], got {n}")
    if text.shape[1] != rows.shape[1]:
        raise ShapeMismatch(f"text {text.shape} does not share d with features {rows.shape}")
    out = text.copy()
    if alpha == 0.0:
        return out
    for group in groups:
        winner = group.winner
        sims = rows @ text[winner]
        top = np.argsort(-sims, kind="stable")[:n]
        mu = rows[top].mean(axis=0)
        blended = (1.0 - alpha) * text[winner] + alpha * mu
        norm = np.linalg.norm(blended)
        if norm > 0.0:
            blended = blended / norm
        out[winner] = blended
    return out
