"""Offline feature exporter: pretrained CLIP RN50 -> VTFB/VTTE files."""

from .encoder import ClipRN50Encoder, ExporterError, FeatureEncoder, StubEncoder
from .export import (
    ExportSpec,
    SplitData,
    export_image_features,
    export_text_embeddings,
)
from .formats import write_class_embeddings, write_feature_bank

__version__ = "0.1.0"

__all__ = [
    "ClipRN50Encoder",
    "ExportSpec",
    "ExporterError",
    "FeatureEncoder",
    "SplitData",
    "StubEncoder",
    "export_image_features",
    "export_text_embeddings",
    "write_class_embeddings",
    "write_feature_bank",
]
