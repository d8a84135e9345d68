"""Symmetric eigendecomposition, energy-based rank selection, and dynamic
eigenscaling: the machinery that turns a raw attention graph into its
tailored low-rank counterpart.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceFailure, InvalidEpsilon, InvalidEta, NotSymmetric

SYMMETRY_RTOL = 1e-8
DEGENERATE_SPREAD_RTOL = 1e-9


@dataclass
class EigenSystem:
    """Eigenvalues sorted descending; eigenvector columns paired by index."""

    eigenvalues: np.ndarray  # [N], descending
    eigenvectors: np.ndarray  # [N, N], orthonormal columns


@dataclass(frozen=True)
class RankSelection:
    k: int
    energy_fraction: float
    eta: float


def eigendecompose_symmetric(a: np.ndarray) -> EigenSystem:
    """Full eigendecomposition of an exactly symmetric matrix.

    Eigenvalues come back descending. Eigenvector signs are fixed so the
    first nonzero component of each column is positive; reconstructions are
    sign-invariant but frozen fixtures are not.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NotSymmetric(f"expected a square matrix, got shape {a.shape}")
    norm = np.linalg.norm(a)
    if np.linalg.norm(a - a.T) > SYMMETRY_RTOL * max(norm, 1e-300):
        raise NotSymmetric("input matrix is not symmetric")
    try:
        vals, vecs = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(f"eigendecomposition failed: {exc}") from exc
    order = np.argsort(vals, kind="stable")[::-1]
    vals = vals[order]
    vecs = vecs[:, order]
    for j in range(vecs.shape[1]):
        col = vecs[:, j]
        nz = np.nonzero(col)[0]
        if nz.size and col[nz[0]] < 0:
            vecs[:, j] = -col
    return EigenSystem(eigenvalues=vals, eigenvectors=vecs)


def select_rank_energy(eigenvalues: np.ndarray, trace: float, eta: float) -> RankSelection:
    """Minimal k whose cumulative eigenvalue energy reaches `eta` of the trace.

    For a PSD graph the trace equals the full eigenvalue sum, so it serves as
    the exact total-energy denominator. If rounding keeps every fraction
    below eta, fall back to full rank.
    """
    if not (0.0 < eta <= 1.0):
        raise InvalidEta(f"eta must be in (0, 1], got {eta}")
    if not trace > 0.0:
        raise InvalidEta(f"trace must be positive, got {trace}")
    vals = np.asarray(eigenvalues, dtype=np.float64)
    fractions = np.cumsum(vals) / trace
    hits = np.nonzero(fractions >= eta)[0]
    if hits.size == 0:
        k = vals.size
    else:
        k = int(hits[0]) + 1
    return RankSelection(k=k, energy_fraction=float(fractions[k - 1]), eta=eta)


def dynamic_eigenscale(sigma_k: np.ndarray, epsilon: float) -> np.ndarray:
    """Affine spectrum map amplifying the top of the band and damping the bottom.

    Maps the largest retained eigenvalue to epsilon times itself and the
    smallest to (2 - epsilon) times itself; everything between is linearly
    interpolated. A (near-)flat spectrum passes through unchanged.
    """
    if not (1.0 < epsilon < 2.0):
        raise InvalidEpsilon(f"epsilon must be in (1, 2), got {epsilon}")
    sigma = np.asarray(sigma_k, dtype=np.float64)
    if sigma.size == 0:
        raise InvalidEpsilon("sigma_k must be nonempty")
    s_min = float(sigma.min())
    s_max = float(sigma.max())
    if s_max - s_min < DEGENERATE_SPREAD_RTOL * max(s_max, 1.0):
        return sigma.copy()
    scaled_range = epsilon * s_max - (2.0 - epsilon) * s_min
    if not scaled_range > 0.0:
        raise InvalidEpsilon(
            f"scaled range is not positive (epsilon={epsilon}, spectrum [{s_min}, {s_max}])"
        )
    return (sigma - s_min) / (s_max - s_min) * scaled_range + (2.0 - epsilon) * s_min


def tailor_vfm_graph(a: np.ndarray, eta: float, epsilon: float) -> tuple[np.ndarray, RankSelection]:
    """Low-rank reconstruction with rescaled spectrum: U_k diag(phi(S_k)) U_k^T.

    Negative round-off eigenvalues of the (PSD) input are clamped to zero
    before rank selection and scaling. An all-zero graph maps to itself.
    """
    system = eigendecompose_symmetric(a)
    vals = np.maximum(system.eigenvalues, 0.0)
    trace = float(np.trace(np.asarray(a, dtype=np.float64)))
    if not trace > 0.0:
        n = vals.size
        return np.zeros_like(np.asarray(a, dtype=np.float64)), RankSelection(
            k=n, energy_fraction=1.0, eta=eta
        )
    selection = select_rank_energy(vals, trace, eta)
    k = selection.k
    u_k = system.eigenvectors[:, :k]
    scaled = dynamic_eigenscale(vals[:k], epsilon)
    tailored = (u_k * scaled) @ u_k.T
    return (tailored + tailored.T) / 2.0, selection
