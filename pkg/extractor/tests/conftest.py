import zlib

import numpy as np
import pytest
import torch
from transformers import CLIPConfig, CLIPModel, ViTConfig, ViTModel

from bundle_extractor.models import build_encoder_pair

JOINT_DIM = 10


class StubTextEncoder:
    """Deterministic stand-in for the CLIP text tower (crc32-seeded rows)."""

    def __init__(self, d=JOINT_DIM):
        self.d = d

    def encode(self, texts):
        out = np.zeros((len(texts), self.d), dtype=np.float32)
        for i, text in enumerate(texts):
            rng = np.random.default_rng(zlib.crc32(text.encode("utf-8")))
            out[i] = rng.normal(size=self.d)
        return out


def build_tiny_pair():
    """Randomly initialized encoders with the real architectures at toy scale.

    CLIP patch 8, VFM patch 4 on 32 px windows: the VFM grid is exactly twice
    the CLIP grid per axis, as with the full-size checkpoints.
    """
    torch.manual_seed(1234)
    clip = CLIPModel(
        CLIPConfig(
            vision_config=dict(
                image_size=32,
                patch_size=8,
                hidden_size=24,
                num_attention_heads=2,
                num_hidden_layers=2,
                intermediate_size=48,
                projection_dim=JOINT_DIM,
            ),
            text_config=dict(
                vocab_size=64,
                hidden_size=16,
                num_attention_heads=2,
                num_hidden_layers=1,
                intermediate_size=32,
                max_position_embeddings=12,
                projection_dim=JOINT_DIM,
                bos_token_id=0,
                eos_token_id=1,
                pad_token_id=1,
            ),
            projection_dim=JOINT_DIM,
        )
    ).eval()
    vfm = ViTModel(
        ViTConfig(
            image_size=32,
            patch_size=4,
            hidden_size=24,
            num_attention_heads=2,
            num_hidden_layers=2,
            intermediate_size=48,
        ),
        add_pooling_layer=False,
    ).eval()
    return build_encoder_pair(clip, vfm, StubTextEncoder())


@pytest.fixture(scope="session")
def tiny_pair():
    return build_tiny_pair()


@pytest.fixture
def tiny_image(tmp_path):
    from PIL import Image

    rng = np.random.default_rng(7)
    arr = (rng.uniform(0, 255, size=(40, 56, 3))).astype(np.uint8)
    path = tmp_path / "image.png"
    Image.fromarray(arr).save(path)
    return str(path)
