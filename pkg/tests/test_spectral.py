import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spectrafuse.errors import InvalidEpsilon, InvalidEta, NotSymmetric
from spectrafuse.spectral import (
    RankSelection,
    dynamic_eigenscale,
    eigendecompose_symmetric,
    select_rank_energy,
    tailor_vfm_graph,
)

from conftest import random_psd


def test_identity_has_unit_spectrum():
    system = eigendecompose_symmetric(np.eye(4))
    assert np.allclose(system.eigenvalues, np.ones(4))


def test_analytic_2x2():
    system = eigendecompose_symmetric(np.array([[2.0, 1.0], [1.0, 2.0]]))
    assert np.allclose(system.eigenvalues, [3.0, 1.0], atol=1e-12)


def test_random_psd_reconstructs(rng):
    a = random_psd(rng, 32)
    system = eigendecompose_symmetric(a)
    recon = (system.eigenvectors * system.eigenvalues) @ system.eigenvectors.T
    rel = np.linalg.norm(a - recon) / np.linalg.norm(a)
    assert rel < 1e-5
    ortho = system.eigenvectors.T @ system.eigenvectors - np.eye(32)
    assert np.abs(ortho).max() < 1e-5


def test_eigenvalues_sorted_descending(rng):
    system = eigendecompose_symmetric(random_psd(rng, 12))
    assert np.all(np.diff(system.eigenvalues) <= 0)


def test_sign_convention_first_nonzero_positive(rng):
    system = eigendecompose_symmetric(random_psd(rng, 9))
    for j in range(9):
        col = system.eigenvectors[:, j]
        nz = np.nonzero(col)[0]
        assert col[nz[0]] > 0


def test_decomposition_is_deterministic(rng):
    a = random_psd(rng, 16)
    s1 = eigendecompose_symmetric(a)
    s2 = eigendecompose_symmetric(a.copy())
    assert np.array_equal(s1.eigenvalues, s2.eigenvalues)
    assert np.array_equal(s1.eigenvectors, s2.eigenvectors)


def test_not_symmetric_raises(rng):
    a = random_psd(rng, 6)
    a[0, 1] += 1e-3
    with pytest.raises(NotSymmetric):
        eigendecompose_symmetric(a)


# --- rank selection ---


def brute_force_rank(eigenvalues, trace, eta):
    """Linear scan over full cumulative sums; the independent oracle."""
    running = 0.0
    for k, value in enumerate(eigenvalues, start=1):
        running += value
        if running / trace >= eta:
            return k
    return len(eigenvalues)


def test_rank_selection_fixture():
    sel = select_rank_energy(np.array([4.0, 3.0, 2.0, 1.0]), 10.0, 0.7)
    assert sel == RankSelection(k=2, energy_fraction=0.7, eta=0.7)


def test_rank_selection_flat_spectrum():
    assert select_rank_energy(np.ones(4), 4.0, 0.5).k == 2


def test_rank_selection_matches_brute_force(rng):
    for _ in range(200):
        n = int(rng.integers(1, 40))
        vals = np.sort(rng.uniform(0.0, 5.0, size=n))[::-1]
        trace = float(vals.sum())
        if trace <= 0:
            continue
        eta = float(rng.uniform(0.05, 1.0))
        assert select_rank_energy(vals, trace, eta).k == brute_force_rank(vals, trace, eta)


def test_rank_selection_falls_back_to_full_rank():
    # cumulative energy never reaches eta when the trace exceeds the sum
    assert select_rank_energy(np.array([0.5, 0.3]), 1.0, 0.9).k == 2


@pytest.mark.parametrize("eta", [0.0, -0.1, 1.5])
def test_invalid_eta(eta):
    with pytest.raises(InvalidEta):
        select_rank_energy(np.ones(3), 3.0, eta)


def test_rank_selection_minimality(rng):
    for _ in range(100):
        vals = np.sort(rng.uniform(0.0, 3.0, size=12))[::-1]
        trace = float(vals.sum()) or 1.0
        eta = float(rng.uniform(0.1, 1.0))
        k = select_rank_energy(vals, trace, eta).k
        fractions = np.cumsum(vals) / trace
        assert fractions[k - 1] >= eta or k == 12
        if k > 1:
            assert fractions[k - 2] < eta


# --- dynamic eigenscaling ---


def test_eigenscale_two_point_fixture():
    assert np.allclose(dynamic_eigenscale(np.array([10.0, 2.0]), 1.5), [15.0, 1.0])


def test_eigenscale_three_point_fixture():
    assert np.allclose(dynamic_eigenscale(np.array([10.0, 6.0, 2.0]), 1.5), [15.0, 8.0, 1.0])


def test_eigenscale_degenerate_passthrough():
    out = dynamic_eigenscale(np.array([5.0, 5.0]), 1.5)
    assert np.array_equal(out, [5.0, 5.0])


@pytest.mark.parametrize("epsilon", [1.0, 2.0, 0.5, 2.5])
def test_eigenscale_invalid_epsilon(epsilon):
    with pytest.raises(InvalidEpsilon):
        dynamic_eigenscale(np.array([3.0, 1.0]), epsilon)


def test_eigenscale_endpoint_identities(rng):
    for _ in range(50):
        vals = np.sort(rng.uniform(0.1, 20.0, size=6))[::-1]
        eps = float(rng.uniform(1.05, 1.95))
        scaled = dynamic_eigenscale(vals, eps)
        assert abs(scaled[0] - eps * vals[0]) <= 1e-9 * abs(eps * vals[0])
        assert abs(scaled[-1] - (2 - eps) * vals[-1]) <= 1e-9 * max(abs((2 - eps) * vals[-1]), 1e-30)


@given(
    values=st.lists(st.floats(0.0, 1e6), min_size=2, max_size=20),
    epsilon=st.floats(1.001, 1.999),
)
@settings(max_examples=200, deadline=None)
def test_eigenscale_preserves_order(values, epsilon):
    vals = np.sort(np.array(values))[::-1]
    scaled = dynamic_eigenscale(vals, epsilon)
    assert np.all(np.diff(scaled) <= 1e-12 * max(vals.max(), 1.0))


# --- graph tailoring ---


def test_tailor_identity_stays_identity():
    tailored, selection = tailor_vfm_graph(np.eye(4), eta=1.0, epsilon=1.5)
    assert selection.k == 4
    assert np.allclose(tailored, np.eye(4), atol=1e-12)


def test_tailor_rank_one_is_unchanged(rng):
    v = rng.normal(size=6)
    a = np.outer(v, v)
    a = (a + a.T) / 2.0
    tailored, selection = tailor_vfm_graph(a, eta=0.5, epsilon=1.5)
    assert selection.k == 1
    assert np.allclose(tailored, a, atol=1e-10 * np.linalg.norm(a))


def test_tailor_matches_rank_one_summation_oracle(rng):
    a = random_psd(rng, 16)
    tailored, selection = tailor_vfm_graph(a, eta=0.9, epsilon=1.5)
    system = eigendecompose_symmetric(a)
    vals = np.maximum(system.eigenvalues, 0.0)
    scaled = dynamic_eigenscale(vals[: selection.k], 1.5)
    oracle = np.zeros_like(a)
    for i in range(selection.k):
        u = system.eigenvectors[:, i]
        oracle += scaled[i] * np.outer(u, u)
    assert np.linalg.norm(tailored - oracle) < 1e-6


def test_tailor_preserves_psd(rng):
    for _ in range(20):
        a = random_psd(rng, 10)
        tailored, _ = tailor_vfm_graph(a, eta=float(rng.uniform(0.3, 1.0)), epsilon=1.5)
        assert np.array_equal(tailored, tailored.T)
        eigmin = np.linalg.eigvalsh(tailored).min()
        assert eigmin >= -1e-6 * max(np.linalg.norm(tailored), 1e-30)


def test_tailor_zero_graph():
    tailored, selection = tailor_vfm_graph(np.zeros((5, 5)), eta=0.9, epsilon=1.5)
    assert np.array_equal(tailored, np.zeros((5, 5)))
    assert selection.k == 5
