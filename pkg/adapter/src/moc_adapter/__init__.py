"""Ingest adapter: turn patch-feature archives and class names into the
canonical slide-bag, prompt, and manifest files the classifier consumes."""

from .archive import LAYOUTS, ArchiveDescriptor, iter_slides, read_slide
from .convert import ConvertedDataset, SlideRecord, convert_features
from .encoders import HashEncoder, get_encoder, register_encoder
from .errors import (
    AdapterError,
    DimMismatch,
    EncoderUnavailable,
    MissingLabel,
    NoPatches,
    UnknownLayout,
)
from .extract import PATCH_SIZE, extract_patch_features
from .prompts import (
    DEFAULT_BACKGROUND_NAMES,
    DEFAULT_TEMPLATES,
    embed_prompts,
    ensemble,
    read_templates_file,
)

__all__ = [
    "LAYOUTS",
    "ArchiveDescriptor",
    "iter_slides",
    "read_slide",
    "ConvertedDataset",
    "SlideRecord",
    "convert_features",
    "HashEncoder",
    "get_encoder",
    "register_encoder",
    "AdapterError",
    "DimMismatch",
    "EncoderUnavailable",
    "MissingLabel",
    "NoPatches",
    "UnknownLayout",
    "PATCH_SIZE",
    "extract_patch_features",
    "DEFAULT_BACKGROUND_NAMES",
    "DEFAULT_TEMPLATES",
    "embed_prompts",
    "ensemble",
    "read_templates_file",
]

__version__ = "0.1.0"
