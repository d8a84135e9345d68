import numpy as np
import pytest

from spectrafuse.errors import CoverageGap, InvalidGamma, ShapeMismatch
from spectrafuse.fusion import VisualFeatures
from spectrafuse.segmentation import (
    LabelMap,
    LogitsMap,
    argmax_labels,
    evaluate,
    patch_text_similarity,
    read_label_pgm,
    refine_with_prior,
    stitch_windows,
    upsample_logits,
    write_label_pgm,
)


def _features(rows):
    rows = np.asarray(rows, dtype=np.float64)
    return VisualFeatures(rows=rows, zero_rows=np.zeros(rows.shape[0], dtype=bool))


def test_similarity_identity_case():
    eye = np.eye(4)
    s = patch_text_similarity(_features(eye), eye)
    assert np.array_equal(s, np.eye(4))


def test_similarity_zero_row():
    rows = np.zeros((2, 3))
    rows[1] = [1.0, 0.0, 0.0]
    s = patch_text_similarity(_features(rows), np.eye(3))
    assert np.array_equal(s[0], np.zeros(3))


def test_similarity_matches_dot_oracle(rng):
    rows = rng.normal(size=(5, 6))
    text = rng.normal(size=(3, 6))
    s = patch_text_similarity(_features(rows), text)
    for p in range(5):
        for c in range(3):
            expected = sum(float(rows[p, i]) * float(text[c, i]) for i in range(6))
            assert abs(s[p, c] - expected) < 1e-6


def test_similarity_shape_mismatch(rng):
    with pytest.raises(ShapeMismatch):
        patch_text_similarity(_features(np.zeros((2, 3))), np.zeros((2, 4)))


# --- prior refinement ---


def test_gamma_zero_returns_scores_exactly(rng):
    s = rng.normal(size=(4, 3))
    out = refine_with_prior(s, np.eye(3), np.ones(3) / np.sqrt(3), gamma=0.0)
    assert np.array_equal(out, s)


def test_gamma_one_collapses_to_global_vector():
    text = np.eye(3)
    cls = np.array([1.0, 0.0, 0.0])
    s = np.random.default_rng(0).normal(size=(5, 3))
    out = refine_with_prior(s, text, cls, gamma=1.0)
    for p in range(5):
        assert np.allclose(out[p], text @ cls, atol=1e-15)


def test_hand_blend_quarter():
    # N=1, C=2: text rows e0, e1; cls = e0 -> global scores [1, 0]
    s = np.array([[0.4, 0.8]])
    out = refine_with_prior(s, np.eye(2), np.array([1.0, 0.0]), gamma=0.25)
    # by hand: 0.75*[0.4, 0.8] + 0.25*[1, 0] = [0.55, 0.6]
    assert np.allclose(out, [[0.55, 0.6]], atol=1e-12)


def test_invalid_gamma():
    with pytest.raises(InvalidGamma):
        refine_with_prior(np.zeros((1, 2)), np.eye(2), np.array([1.0, 0.0]), gamma=1.5)


# --- upsampling ---


def test_upsample_constant_is_constant():
    patches = np.full((3, 5, 2), 1.25)
    out = upsample_logits(patches, (12, 20))
    assert np.array_equal(out, np.full((12, 20, 2), 1.25))


def test_upsample_identity_when_sizes_match():
    rng = np.random.default_rng(1)
    patches = rng.normal(size=(4, 4, 3))
    out = upsample_logits(patches, (4, 4))
    assert np.array_equal(out, patches)


def test_upsample_2x2_to_4x4_hand_stencil():
    patches = np.array([[1.0, 2.0], [3.0, 4.0]])[:, :, None]
    out = upsample_logits(patches, (4, 4))[:, :, 0]
    # source coords (i+0.5)/4*2-0.5 = [0, 0.25, 0.75, 1] after clamping;
    # all weights are dyadic so the stencil is exact
    expected = np.array(
        [
            [1.0, 1.25, 1.75, 2.0],
            [1.5, 1.75, 2.25, 2.5],
            [2.5, 2.75, 3.25, 3.5],
            [3.0, 3.25, 3.75, 4.0],
        ]
    )
    assert np.array_equal(out, expected)


# --- stitching ---


def test_single_window_stitch_is_identity(rng):
    logits = rng.normal(size=(6, 6, 2))
    out = stitch_windows([(logits, (0, 0))], (6, 6))
    assert np.array_equal(out.values, logits)
    assert np.array_equal(out.counts, np.ones((6, 6), dtype=np.int64))


def test_overlapping_constant_windows_average():
    a = np.full((4, 4, 1), 2.0)
    b = np.full((4, 4, 1), 6.0)
    out = stitch_windows([(a, (0, 0)), (b, (2, 0))], (4, 6))
    assert np.array_equal(out.values[:, :2, 0], np.full((4, 2), 2.0))
    assert np.array_equal(out.values[:, 2:4, 0], np.full((4, 2), 4.0))
    assert np.array_equal(out.values[:, 4:, 0], np.full((4, 2), 6.0))


def test_stitch_matches_dense_accumulation_oracle(rng):
    windows = [
        (rng.normal(size=(3, 3, 2)), (0, 0)),
        (rng.normal(size=(3, 3, 2)), (2, 0)),
        (rng.normal(size=(3, 3, 2)), (4, 0)),
    ]
    out = stitch_windows(windows, (3, 7))
    acc = np.zeros((3, 7, 2))
    cnt = np.zeros((3, 7))
    for logits, (x, y) in windows:
        for r in range(3):
            for c in range(3):
                acc[y + r, x + c] += logits[r, c]
                cnt[y + r, x + c] += 1
    assert (cnt > 0).all()
    expected = acc / cnt[:, :, None]
    assert np.abs(out.values - expected).max() < 1e-6


def test_stitch_coverage_gap():
    with pytest.raises(CoverageGap):
        stitch_windows([(np.zeros((2, 2, 1)), (0, 0))], (4, 4))


# --- labels ---


def test_argmax_dominant_class():
    values = np.zeros((3, 3, 2))
    values[:, :, 1] = 5.0
    labels = argmax_labels(LogitsMap(values=values, counts=np.ones((3, 3), dtype=np.int64)))
    assert np.array_equal(labels.labels, np.ones((3, 3), dtype=np.int64))


def test_argmax_tie_goes_to_lowest_index():
    values = np.full((2, 2, 3), 1.5)
    labels = argmax_labels(LogitsMap(values=values, counts=np.ones((2, 2), dtype=np.int64)))
    assert np.array_equal(labels.labels, np.zeros((2, 2), dtype=np.int64))


def test_argmax_shift_invariance(rng):
    scores = rng.integers(0, 100, size=(4, 4, 5)).astype(np.float64)
    shifted = scores + 17.5
    base = argmax_labels(LogitsMap(values=scores, counts=np.ones((4, 4), dtype=np.int64)))
    moved = argmax_labels(LogitsMap(values=shifted, counts=np.ones((4, 4), dtype=np.int64)))
    assert np.array_equal(base.labels, moved.labels)


# --- metrics ---


def test_perfect_prediction():
    gt = np.array([[0, 1], [2, 1]])
    report = evaluate(gt, gt, n_classes=3)
    assert report.miou == 1.0
    assert report.pacc == 1.0


def test_inverted_binary_map():
    gt = np.array([[0, 0], [1, 1]])
    report = evaluate(1 - gt, gt, n_classes=2)
    assert report.miou == 0.0
    assert report.pacc == 0.0


def test_hand_2x2_case_is_exact():
    pred = np.array([[0, 0], [1, 1]])
    gt = np.array([[0, 1], [1, 1]])
    report = evaluate(pred, gt, n_classes=2)
    assert report.per_class_iou == [1 / 2, 2 / 3]
    assert report.miou == 7 / 12
    assert report.pacc == 3 / 4


def test_ignore_index_excluded_everywhere():
    pred = np.array([[0, 0], [1, 1]])
    gt = np.array([[0, 255], [1, 1]])
    report = evaluate(pred, gt, n_classes=2, ignore_index=255)
    assert report.per_class_iou == [1.0, 1.0]
    assert report.miou == 1.0
    assert report.pacc == 1.0


def test_absent_class_marked_none():
    pred = np.zeros((2, 2), dtype=int)
    gt = np.zeros((2, 2), dtype=int)
    report = evaluate(pred, gt, n_classes=3)
    assert report.per_class_iou == [1.0, None, None]
    assert report.miou == 1.0


def test_evaluate_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        evaluate(np.zeros((2, 2)), np.zeros((3, 3)))


def test_pacc_invariant_under_simultaneous_relabeling(rng):
    pred = rng.integers(0, 4, size=(6, 6))
    gt = rng.integers(0, 4, size=(6, 6))
    perm = np.array([2, 0, 3, 1])
    base = evaluate(pred, gt, n_classes=4)
    relabeled = evaluate(perm[pred], perm[gt], n_classes=4)
    assert base.pacc == relabeled.pacc


# --- PGM ---


def test_pgm_round_trip(tmp_path, rng):
    labels = rng.integers(0, 7, size=(9, 13))
    path = str(tmp_path / "labels.pgm")
    write_label_pgm(LabelMap(labels=labels), path)
    assert np.array_equal(read_label_pgm(path), labels)


def test_pgm_rejects_more_than_256_classes(tmp_path):
    labels = np.array([[0, 300]])
    with pytest.raises(ValueError):
        write_label_pgm(labels, str(tmp_path / "bad.pgm"))
