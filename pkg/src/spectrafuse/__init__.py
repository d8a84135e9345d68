"""Training-free open-vocabulary segmentation by spectral graph distillation,
operating on precomputed encoder tensor bundles."""

from .bundle import Bundle, Window, build_gram_graph, read_bundle, write_bundle
from .pipeline import RunConfig, SegmentationResult, segment_bundle

__version__ = "0.1.0"

__all__ = [
    "Bundle",
    "Window",
    "RunConfig",
    "SegmentationResult",
    "build_gram_graph",
    "read_bundle",
    "segment_bundle",
    "write_bundle",
    "__version__",
]
