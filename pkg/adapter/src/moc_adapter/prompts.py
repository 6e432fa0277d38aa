"""Build prompt embedding files from class names and templates."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .encoders import get_encoder
from .errors import AdapterError
from .formats import write_prompt_file

DEFAULT_TEMPLATES = ("A pathology image of {}",)
DEFAULT_BACKGROUND_NAMES = (
    "stromal tissue",
    "inflammatory tissue",
    "vascular tissue",
    "necrotic tissue",
)


def ensemble(variants) -> np.ndarray:
    """Average template variants of one class and re-normalize to unit length."""
    mat = np.asarray(variants, dtype=np.float64)
    if mat.ndim == 1:
        mat = mat[None, :]
    if mat.ndim != 2 or mat.shape[0] < 1:
        raise AdapterError(f"expected >= 1 variant embeddings, got shape {mat.shape}")
    mean = mat.mean(axis=0)
    norm = float(np.linalg.norm(mean))
    if norm < 1e-12:
        raise AdapterError("template variants cancel out; cannot normalize their mean")
    return mean / norm


def read_templates_file(path) -> tuple[str, ...]:
    """One template per line; each must contain a ``{}`` placeholder."""
    lines = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines()]
    templates = tuple(ln for ln in lines if ln)
    if not templates:
        raise AdapterError(f"{path}: no templates")
    for tpl in templates:
        if "{}" not in tpl:
            raise AdapterError(f"{path}: template {tpl!r} has no {{}} placeholder")
    return templates


def _embed_names(encoder, names, templates) -> np.ndarray:
    rows = []
    for name in names:
        variants = []
        for tpl in templates:
            vec = np.asarray(encoder.encode_text(tpl.format(name)), dtype=np.float64)
            variants.append(vec / np.linalg.norm(vec))
        rows.append(ensemble(variants))
    return np.asarray(rows).reshape(len(names), encoder.dim)


def embed_prompts(class_names, background_names=DEFAULT_BACKGROUND_NAMES,
                  templates=DEFAULT_TEMPLATES, encoder_id: str = "hash-512",
                  out=None) -> Path:
    """Embed class and background names into a prompt file.

    Each name is rendered through every template, the variant embeddings
    are unit-normalized, averaged, and re-normalized. The file records the
    template set joined with `` | `` when more than one was used.
    """
    class_names = list(class_names)
    if len(class_names) < 2:
        raise AdapterError(f"need >= 2 class names, got {class_names}")
    background_names = list(background_names)
    templates = tuple(templates)
    if not templates:
        raise AdapterError("need at least one template")
    if out is None:
        raise ValueError("out path is required")
    encoder = get_encoder(encoder_id)
    W = _embed_names(encoder, class_names, templates)
    W_beta = (
        _embed_names(encoder, background_names, templates)
        if background_names
        else np.zeros((0, encoder.dim))
    )
    write_prompt_file(out, class_names, W, background_names, W_beta, " | ".join(templates))
    return Path(out)
