"""Spectral signatures, sorted-Wasserstein distances, and optimal head pairing.

Head graphs are compared through the L1 distance between their sorted,
L1-normalized top-m eigenvalues. Minimizing the cost 1 - D_W pairs heads
whose spectra differ most, so the distilled structure supplements what the
target graph lacks. The assignment itself runs in exact integer arithmetic:
every float cost is losslessly rescaled to an integer, and a positional
tie-break term makes the minimizer the lexicographically smallest optimal
permutation, bit-for-bit reproducibly.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import InvalidM, LengthMismatch, NotSquare, TooLarge
from .spectral import eigendecompose_symmetric

BRUTE_FORCE_MAX = 8

MATCHING_MODES = ("complementary", "similar", "sequential")


@dataclass(frozen=True)
class SpectralSignature:
    """L1-normalized top-m eigenvalues, stored ascending."""

    values: np.ndarray


@dataclass
class HeadAssignment:
    """A bijective head pairing plus everything needed to audit it."""

    pairs: list[tuple[int, int]]  # (vfm head i, clip head j)
    weights: np.ndarray  # D_W per pair, aligned with `pairs`
    sig_vfm: list[SpectralSignature]
    sig_clip: list[SpectralSignature]
    cost_matrix: np.ndarray  # h x h, entries 1 - D_W
    mode: str


def spectral_signature(eigenvalues: np.ndarray, m: int) -> SpectralSignature:
    """Top-m eigenvalues of a descending spectrum, clamped and L1-normalized."""
    vals = np.asarray(eigenvalues, dtype=np.float64)
    if not (1 <= m <= vals.size):
        raise InvalidM(f"m must be in [1, {vals.size}], got {m}")
    top = np.maximum(vals[:m], 0.0)
    total = float(top.sum())
    if total == 0.0:
        top = np.full(m, 1.0 / m)
    else:
        top = top / total
    return SpectralSignature(values=np.sort(top))


def wasserstein_sorted(u: np.ndarray, v: np.ndarray) -> float:
    """1-D Wasserstein distance between equal-length vectors: L1 after sorting."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise LengthMismatch(f"signatures must be equal-length vectors, got {u.shape} vs {v.shape}")
    return float(np.abs(np.sort(u) - np.sort(v)).sum())


def build_cost_matrix(
    sig_vfm: list[SpectralSignature], sig_clip: list[SpectralSignature]
) -> np.ndarray:
    """Cost C_ij = 1 - D_W(sig_vfm_i, sig_clip_j); in [-1, 1] for L1-normalized input."""
    h = len(sig_vfm)
    cost = np.empty((h, len(sig_clip)))
    for i, su in enumerate(sig_vfm):
        for j, sv in enumerate(sig_clip):
            cost[i, j] = 1.0 - wasserstein_sorted(su.values, sv.values)
    return cost


def assignment_cost(cost: np.ndarray, perm: np.ndarray) -> float:
    """Total cost of a row->column permutation, summed in row order."""
    total = 0.0
    for i, j in enumerate(perm):
        total += float(cost[i, j])
    return total


def _exact_int_matrix(cost: np.ndarray) -> list[list[int]]:
    """Losslessly rescale a float matrix to integers (common power-of-two scale)."""
    fracs = [[Fraction(float(x)) for x in row] for row in cost]
    denom = 1
    for row in fracs:
        for f in row:
            if f.denominator > denom:
                denom = f.denominator
    return [[int(f.numerator) * (denom // f.denominator) for f in row] for row in fracs]


def _with_lex_tiebreak(int_cost: list[list[int]]) -> list[list[int]]:
    """Combine integer costs with a positional term so that among all
    minimum-cost permutations the lexicographically smallest one has the
    strictly smallest combined value."""
    n = len(int_cost)
    lo = min(min(row) for row in int_cost)
    big = n**n if n > 1 else 1
    return [
        [(int_cost[i][j] - lo) * big + n ** (n - 1 - i) * j for j in range(n)]
        for i in range(n)
    ]


def _min_assignment_int(cost: list[list[int]]) -> list[int]:
    """O(n^3) shortest-augmenting-path assignment on exact integer costs."""
    n = len(cost)
    inf = float("inf")
    u = [0] * (n + 1)
    v = [0] * (n + 1)
    p = [0] * (n + 1)  # p[j]: row matched to column j, 1-indexed
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1][j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    out = [0] * n
    for j in range(1, n + 1):
        out[p[j] - 1] = j - 1
    return out


def _check_square(cost: np.ndarray) -> np.ndarray:
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise NotSquare(f"cost matrix must be square, got shape {cost.shape}")
    if not np.isfinite(cost).all():
        raise NotSquare("cost matrix must be finite")
    return cost


def hungarian_min_assignment(cost: np.ndarray) -> np.ndarray:
    """Permutation minimizing the total cost; ties resolved to the
    lexicographically smallest permutation via exact integer arithmetic."""
    cost = _check_square(cost)
    combined = _with_lex_tiebreak(_exact_int_matrix(cost))
    return np.array(_min_assignment_int(combined), dtype=np.int64)


def brute_force_assignment(cost: np.ndarray) -> np.ndarray:
    """Exhaustive-enumeration oracle: global minimum with the same tie-break.

    Enumerates permutations in lexicographic order keeping strict
    improvements only, over an exact integer rescaling of the costs, so the
    result is reproducible and association-free.
    """
    cost = _check_square(cost)
    n = cost.shape[0]
    if n > BRUTE_FORCE_MAX:
        raise TooLarge(f"brute force limited to h <= {BRUTE_FORCE_MAX}, got {n}")
    rows = []
    scale = 1
    as_fracs = [[Fraction(float(x)) for x in row] for row in cost]
    for row in as_fracs:
        for f in row:
            if f.denominator > scale:
                scale = f.denominator
    rows = [[int(f.numerator) * (scale // f.denominator) for f in row] for row in as_fracs]
    best_perm = None
    best_total = None
    for perm in itertools.permutations(range(n)):
        total = 0
        for i, j in enumerate(perm):
            total += rows[i][j]
        if best_total is None or total < best_total:
            best_total = total
            best_perm = perm
    return np.array(best_perm, dtype=np.int64)


def match_heads(
    a_vfm: np.ndarray, a_clip: np.ndarray, m: int, mode: str = "complementary"
) -> HeadAssignment:
    """Pair VFM heads with CLIP heads from their spectral signatures.

    `a_vfm` and `a_clip` are [h, N, N] stacks of full (untailored) graphs.
    Complementary mode minimizes 1 - D_W (maximizing total spectral distance);
    similar mode minimizes D_W; sequential pairs head i with head i. The
    per-pair weight is always the recomputed Wasserstein distance.
    """
    a_vfm = np.asarray(a_vfm)
    a_clip = np.asarray(a_clip)
    if a_vfm.shape != a_clip.shape or a_vfm.ndim != 3:
        raise LengthMismatch(
            f"expected matching [h, N, N] stacks, got {a_vfm.shape} vs {a_clip.shape}"
        )
    if mode not in MATCHING_MODES:
        raise ValueError(f"unknown matching mode {mode!r}")
    h = a_vfm.shape[0]
    sig_vfm = [
        spectral_signature(eigendecompose_symmetric(a_vfm[i]).eigenvalues, m) for i in range(h)
    ]
    sig_clip = [
        spectral_signature(eigendecompose_symmetric(a_clip[j]).eigenvalues, m) for j in range(h)
    ]
    cost = build_cost_matrix(sig_vfm, sig_clip)
    if mode == "complementary":
        perm = hungarian_min_assignment(cost)
    elif mode == "similar":
        perm = hungarian_min_assignment(1.0 - cost)
    else:
        perm = np.arange(h, dtype=np.int64)
    pairs = [(i, int(perm[i])) for i in range(h)]
    weights = np.array(
        [wasserstein_sorted(sig_vfm[i].values, sig_clip[j].values) for i, j in pairs]
    )
    return HeadAssignment(
        pairs=pairs,
        weights=weights,
        sig_vfm=sig_vfm,
        sig_clip=sig_clip,
        cost_matrix=cost,
        mode=mode,
    )
