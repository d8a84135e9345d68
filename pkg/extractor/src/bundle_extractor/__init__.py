"""Bundle extractor: dumps CLIP/DINO final-block attention tensors, prompt
embeddings, and the global image embedding into the segmentation core's
bundle format."""

from .extract import ExtractionRequest, align_vfm_grid, extract_bundle
from .text import encode_prompts

__version__ = "0.1.0"

__all__ = ["ExtractionRequest", "align_vfm_grid", "encode_prompts", "extract_bundle", "__version__"]
