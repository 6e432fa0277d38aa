"""Encoder plugin registry.

The adapter never hard-depends on a particular vision-language model.
Encoders are looked up by id; anything exposing ``dim``, ``encode_text``
and ``encode_image`` can be registered. A deterministic hash encoder ships
built in (ids ``hash-<dim>``) for tests and offline pipeline plumbing: it
derives each embedding from a SHA-256 of the payload, so re-runs are
byte-identical on any machine.
"""
from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .errors import EncoderUnavailable


class Encoder(Protocol):
    dim: int

    def encode_text(self, text: str) -> np.ndarray: ...

    def encode_image(self, path) -> np.ndarray: ...


class HashEncoder:
    """Deterministic pseudo-embeddings seeded from a content hash."""

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.dim = dim

    def _embed(self, payload: bytes) -> np.ndarray:
        seed = int.from_bytes(hashlib.sha256(payload).digest()[:8], "little")
        vec = np.random.default_rng(seed).standard_normal(self.dim)
        return vec / np.linalg.norm(vec)

    def encode_text(self, text: str) -> np.ndarray:
        return self._embed(b"text\x00" + text.encode("utf-8"))

    def encode_image(self, path) -> np.ndarray:
        return self._embed(b"image\x00" + Path(path).read_bytes())


_REGISTRY: dict[str, Callable[[], Encoder]] = {}


def register_encoder(encoder_id: str, factory: Callable[[], Encoder]) -> None:
    _REGISTRY[encoder_id] = factory


def get_encoder(encoder_id: str) -> Encoder:
    if encoder_id in _REGISTRY:
        return _REGISTRY[encoder_id]()
    if encoder_id.startswith("hash-"):
        try:
            return HashEncoder(int(encoder_id[5:]))
        except ValueError:
            pass
    known = sorted(_REGISTRY)
    raise EncoderUnavailable(
        f"no encoder registered as {encoder_id!r}; "
        f"known: {', '.join(known) if known else '(none)'}, plus built-in hash-<dim>"
    )
