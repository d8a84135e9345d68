import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import squareform

from spectrafuse.errors import InvalidAlpha, InvalidN
from spectrafuse.fusion import VisualFeatures
from spectrafuse.text import (
    PromptGroup,
    adjust_text_embeddings,
    build_prompt_groups,
    cosine_distance_matrix,
    presence_prior,
    ward_cluster,
    ward_linkage,
)


def _features(rows):
    rows = np.asarray(rows, dtype=np.float64)
    return VisualFeatures(rows=rows, zero_rows=np.zeros(rows.shape[0], dtype=bool))


def test_prior_one_hot_for_orthonormal_rows():
    text = np.eye(4)
    prior = presence_prior(text, text[2])
    assert np.array_equal(prior.scores, np.array([0.0, 0.0, 1.0, 0.0]))


def test_prior_orthogonal_cls_gives_zeros():
    text = np.eye(3, 5)
    cls = np.zeros(5)
    cls[4] = 1.0
    assert np.array_equal(presence_prior(text, cls).scores, np.zeros(3))


def test_prior_matches_dot_oracle(rng):
    text = rng.normal(size=(6, 9))
    text /= np.linalg.norm(text, axis=1, keepdims=True)
    cls = rng.normal(size=9)
    cls /= np.linalg.norm(cls)
    prior = presence_prior(text, cls)
    for i in range(6):
        expected = sum(float(text[i, j]) * float(cls[j]) for j in range(9))
        assert abs(prior.scores[i] - expected) < 1e-6


def test_prior_renormalizes_scaled_inputs(rng):
    text = rng.normal(size=(4, 7))
    text /= np.linalg.norm(text, axis=1, keepdims=True)
    cls = rng.normal(size=7)
    cls /= np.linalg.norm(cls)
    doubled = presence_prior(2.0 * text, 3.0 * cls)
    base = presence_prior(text, cls)
    assert np.allclose(doubled.scores, base.scores, atol=1e-12)


# --- ward clustering ---


def test_threshold_zero_gives_singletons(rng):
    text = rng.normal(size=(5, 8))
    clusters = ward_cluster(text, threshold=0.0)
    assert clusters == [(0,), (1,), (2,), (3,), (4,)]


def test_threshold_inf_gives_one_cluster(rng):
    text = rng.normal(size=(6, 8))
    clusters = ward_cluster(text, threshold=np.inf)
    assert clusters == [tuple(range(6))]


def test_single_class():
    assert ward_cluster(np.ones((1, 4)), threshold=0.5) == [(0,)]


def _partition_from_labels(labels):
    groups = {}
    for idx, lab in enumerate(labels):
        groups.setdefault(lab, []).append(idx)
    return sorted(tuple(v) for v in groups.values())


@pytest.mark.parametrize("seed", range(8))
def test_matches_scipy_linkage_oracle(seed):
    rng = np.random.default_rng(seed)
    c = int(rng.integers(2, 12))
    text = rng.normal(size=(c, 6))
    threshold = float(rng.uniform(0.1, 1.5))
    mine = sorted(ward_cluster(text, threshold))
    dist = cosine_distance_matrix(text)
    z = linkage(squareform(dist, checks=False), method="ward")
    labels = fcluster(z, t=threshold, criterion="distance")
    assert mine == _partition_from_labels(labels)


def test_linkage_heights_match_scipy(rng):
    text = rng.normal(size=(7, 5))
    dist = cosine_distance_matrix(text)
    merges = ward_linkage(dist)
    z = linkage(squareform(dist, checks=False), method="ward")
    assert np.allclose([m[2] for m in merges], z[:, 2], atol=1e-10)


@given(
    c=st.integers(2, 10),
    threshold=st.floats(0.0, 3.0, allow_nan=False),
    seed=st.integers(0, 1000),
)
@settings(max_examples=60, deadline=None)
def test_clusters_partition_everything(c, threshold, seed):
    text = np.random.default_rng(seed).normal(size=(c, 4))
    clusters = ward_cluster(text, threshold)
    flat = sorted(i for group in clusters for i in group)
    assert flat == list(range(c))


def test_merge_heights_nondecreasing(rng):
    for _ in range(10):
        text = rng.normal(size=(9, 5))
        merges = ward_linkage(cosine_distance_matrix(text))
        heights = [m[2] for m in merges]
        assert all(b >= a - 1e-12 for a, b in zip(heights, heights[1:]))


# --- groups and winners ---


def test_winner_is_argmax_with_lowest_index_ties():
    prior = presence_prior(np.eye(4), np.ones(4) / 2.0)
    groups = build_prompt_groups([(0, 1), (2, 3)], prior)
    assert groups == [PromptGroup((0, 1), 0), PromptGroup((2, 3), 2)]


def test_winner_invariant_under_prior_rescaling(rng):
    scores = rng.uniform(size=6)
    from spectrafuse.text import PresencePrior

    base = build_prompt_groups([(0, 1, 2), (3, 4, 5)], PresencePrior(scores=scores))
    scaled = build_prompt_groups([(0, 1, 2), (3, 4, 5)], PresencePrior(scores=7.3 * scores))
    assert [g.winner for g in base] == [g.winner for g in scaled]


# --- adjustment ---


def test_alpha_zero_is_bit_identical(rng):
    text = rng.normal(size=(3, 4))
    text /= np.linalg.norm(text, axis=1, keepdims=True)
    features = _features(rng.normal(size=(5, 4)))
    prior = presence_prior(text, text[0])
    groups = build_prompt_groups([(0,), (1,), (2,)], prior)
    out = adjust_text_embeddings(text, groups, prior, features, n=2, alpha=0.0)
    assert np.array_equal(out, text)


def test_alpha_one_full_patch_mean(rng):
    rows = rng.normal(size=(4, 3))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    features = _features(rows)
    text = np.eye(2, 3)
    prior = presence_prior(text, text[0])
    groups = build_prompt_groups([(0,), (1,)], prior)
    out = adjust_text_embeddings(text, groups, prior, features, n=4, alpha=1.0)
    mu = rows.mean(axis=0)
    assert np.allclose(out[0], mu / np.linalg.norm(mu), atol=1e-12)


def test_hand_blend_case():
    # N=3 patches in the plane, two singleton groups, n=1, alpha=0.5
    rows = np.array([[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]])
    text = np.array([[0.8, 0.6], [0.0, 1.0]])
    features = _features(rows)
    from spectrafuse.text import PresencePrior

    prior = PresencePrior(scores=np.array([0.9, 0.1]))
    groups = build_prompt_groups([(0,), (1,)], prior)
    out = adjust_text_embeddings(text, groups, prior, features, n=1, alpha=0.5)
    # winner 0: best patch is row 2 (sim 0.96); blend 0.5*[0.8,0.6] + 0.5*[0.6,0.8]
    # = [0.7, 0.7], normalized to [1/sqrt(2), 1/sqrt(2)]
    assert np.allclose(out[0], [1 / np.sqrt(2), 1 / np.sqrt(2)], atol=1e-12)
    # winner 1: best patch is row 1; blend of identical vectors stays put
    assert np.allclose(out[1], [0.0, 1.0], atol=1e-12)


def test_non_winner_rows_untouched(rng):
    text = rng.normal(size=(4, 5))
    text /= np.linalg.norm(text, axis=1, keepdims=True)
    features = _features(rng.normal(size=(6, 5)))
    from spectrafuse.text import PresencePrior

    prior = PresencePrior(scores=np.array([0.9, 0.1, 0.8, 0.2]))
    groups = build_prompt_groups([(0, 1), (2, 3)], prior)
    out = adjust_text_embeddings(text, groups, prior, features, n=3, alpha=0.4)
    assert np.array_equal(out[1], text[1])
    assert np.array_equal(out[3], text[3])
    assert not np.array_equal(out[0], text[0])


def test_adjust_validation(rng):
    text = np.eye(2, 4)
    features = _features(np.eye(3, 4))
    from spectrafuse.text import PresencePrior

    prior = PresencePrior(scores=np.array([0.5, 0.5]))
    groups = build_prompt_groups([(0,), (1,)], prior)
    with pytest.raises(InvalidAlpha):
        adjust_text_embeddings(text, groups, prior, features, n=1, alpha=1.5)
    with pytest.raises(InvalidN):
        adjust_text_embeddings(text, groups, prior, features, n=9, alpha=0.5)
    with pytest.raises(InvalidN):
        adjust_text_embeddings(text, groups, prior, features, n=0, alpha=0.5)
