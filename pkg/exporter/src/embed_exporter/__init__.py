"""Embed manifest items with frozen encoders and write GCEB files."""
from .errors import (
    ExporterError,
    ImageDecodeError,
    ManifestError,
    ModelLoadError,
)
from .export import ExportResult, export_embeddings
from .gceb import default_sidecar_path, write_gceb
from .imaging import (
    crop_square,
    load_image,
    pad_to_square,
    preprocess,
    to_model_input,
)
from .manifest import CropWindow, ManifestRow, read_manifest
from .models import MODELS, FrozenEncoder, ModelSpec, load_model

__version__ = "0.1.0"

__all__ = [
    "CropWindow",
    "ExporterError",
    "ExportResult",
    "FrozenEncoder",
    "ImageDecodeError",
    "MODELS",
    "ManifestError",
    "ManifestRow",
    "ModelLoadError",
    "ModelSpec",
    "crop_square",
    "default_sidecar_path",
    "export_embeddings",
    "load_image",
    "load_model",
    "pad_to_square",
    "preprocess",
    "read_manifest",
    "to_model_input",
    "write_gceb",
]
