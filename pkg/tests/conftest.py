import os

import numpy as np
import pytest

from spectrafuse.bundle import Bundle, Window

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")
GOLDEN_BUNDLE = os.path.join(DATA_DIR, "golden_bundle")
GOLDEN_GT = os.path.join(DATA_DIR, "golden_gt.pgm")
GOLDEN_LABEL = os.path.join(DATA_DIR, "golden_label.pgm")
GOLDEN_META = os.path.join(DATA_DIR, "golden_meta.json")


@pytest.fixture
def rng():
    return np.random.default_rng(20240809)


def random_psd(rng, n, d=None):
    """Random PSD matrix K K^T, exactly symmetrized."""
    k = rng.normal(size=(n, d or n))
    a = k @ k.T
    return (a + a.T) / 2.0


def make_bundle(rng, n_windows=1, h=2, grid=2, d_head=3, d_joint=5, n_classes=2,
                window_size=8, stride=4) -> Bundle:
    """Small random but valid bundle for I/O and CLI tests."""
    n = grid * grid
    width = window_size + (n_windows - 1) * stride
    windows = []
    for w in range(n_windows):
        windows.append(
            Window(
                origin_xy=(w * stride, 0),
                k_vfm=rng.normal(size=(h, n, d_head)).astype(np.float32),
                k_clip=rng.normal(size=(h, n, d_head)).astype(np.float32),
                v_clip=rng.normal(size=(h, n, d_head)).astype(np.float32),
            )
        )
    text = rng.normal(size=(n_classes, d_joint))
    text /= np.linalg.norm(text, axis=1, keepdims=True)
    cls = rng.normal(size=d_joint)
    cls /= np.linalg.norm(cls)
    return Bundle(
        image_size_hw=(window_size, width),
        window_size=window_size,
        stride=stride,
        h=h,
        n_patches=n,
        d_head=d_head,
        d_joint=d_joint,
        n_classes=n_classes,
        grid_hw=(grid, grid),
        class_names=[f"class-{i}" for i in range(n_classes)],
        w_o=rng.normal(size=(h * d_head, h * d_head)).astype(np.float32),
        post_ln_scale=np.ones(h * d_head, dtype=np.float32),
        post_ln_bias=np.zeros(h * d_head, dtype=np.float32),
        proj=rng.normal(size=(h * d_head, d_joint)).astype(np.float32),
        text_embeddings=text.astype(np.float32),
        cls_embedding=cls.astype(np.float32),
        windows=windows,
    )
