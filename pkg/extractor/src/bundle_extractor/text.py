"""Prompt-ensemble text encoding: each class name is expanded through the 80
templates, every sentence embedded, and the normalized embeddings averaged
into one unit vector per class."""

from __future__ import annotations

from typing import Protocol

import numpy as np

from .templates import PROMPT_TEMPLATES


class TextEncoder(Protocol):
    def encode(self, texts: list[str]) -> np.ndarray:
        """Return one embedding row per input sentence, shape [len(texts), d]."""
        ...


class HFClipTextEncoder:
    """CLIP text tower behind the TextEncoder protocol."""

    def __init__(self, model, tokenizer, device="cpu", batch_size=64):
        self.model = model
        self.tokenizer = tokenizer
        self.device = device
        self.batch_size = batch_size

    def encode(self, texts: list[str]) -> np.ndarray:
        import torch

        rows = []
        for start in range(0, len(texts), self.batch_size):
            batch = texts[start : start + self.batch_size]
            tokens = self.tokenizer(batch, padding=True, return_tensors="pt").to(self.device)
            with torch.no_grad():
                out = self.model.get_text_features(**tokens)
            embeds = out if torch.is_tensor(out) else out.pooler_output
            rows.append(embeds.cpu().numpy().astype(np.float32))
        return np.concatenate(rows, axis=0)


def encode_prompts(prompts: list[str], encoder: TextEncoder) -> tuple[np.ndarray, dict]:
    """Embed each class prompt through the full template ensemble.

    Per class: the templated sentences are encoded, L2-normalized, averaged,
    and the mean renormalized. Returns [C, d] float32 rows plus metadata
    (template count) for the extraction report.
    """
    if not prompts:
        raise ValueError("class prompt list must be nonempty")
    sentences = [tpl.format(p) for p in prompts for tpl in PROMPT_TEMPLATES]
    embedded = np.asarray(encoder.encode(sentences), dtype=np.float64)
    n_templates = len(PROMPT_TEMPLATES)
    if embedded.shape[0] != len(prompts) * n_templates:
        raise ValueError("text encoder returned the wrong number of rows")
    norms = np.linalg.norm(embedded, axis=1, keepdims=True)
    embedded = embedded / np.where(norms == 0.0, 1.0, norms)
    per_class = embedded.reshape(len(prompts), n_templates, -1).mean(axis=1)
    norms = np.linalg.norm(per_class, axis=1, keepdims=True)
    per_class = per_class / np.where(norms == 0.0, 1.0, norms)
    return per_class.astype(np.float32), {"template_count": n_templates}
