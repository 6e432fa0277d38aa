"""Writers for the canonical slide-bag container formats.

The adapter produces the same on-disk artifacts the classifier pipeline
consumes, implemented here against the documented byte layout so the two
packages stay coupled only through the files themselves.

All multi-byte fields are little-endian; strings are UTF-8 with a u16 byte
length prefix.

bag file (.mocb)
    magic ``MOCB``, version u16 = 1, flags u16 (bit0: coords present),
    d u32, n u32, n*d float32 patch embeddings row-major, optional n*2
    int32 coords, label int32 (-1 = unlabeled), slide_id string.

prompt file (.mocp)
    magic ``MOCP``, version u16 = 1, d u32, C u32, Cb u32, template string,
    C class-name strings, Cb background-name strings, C*d float32
    foreground matrix, Cb*d float32 background matrix.

manifest (.tsv)
    one JSON header line (sorted keys ``class_names``, ``dataset_id``,
    ``embedding_dim``) followed by one tab-separated line per slide:
    ``slide_id<TAB>relative bag path<TAB>label<TAB>patch count``.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import AdapterError, DimMismatch

BAG_MAGIC = b"MOCB"
PROMPT_MAGIC = b"MOCP"
FORMAT_VERSION = 1

# rows whose norm moved more than this during renormalization are reported
RENORM_REPORT_TOL = 1e-3
_NORM_FLOOR = 1e-12


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise AdapterError(f"string too long to store ({len(raw)} bytes)")
    return struct.pack("<H", len(raw)) + raw


def normalize_rows(rows: np.ndarray, what: str) -> tuple[np.ndarray, bool]:
    """L2-normalize each row; report whether any row moved by > 1e-3.

    Returns (unit_rows, renormalized). Embedding archives in the wild are
    usually near-unit already, so the flag marks sources that actually
    needed correction.
    """
    mat = np.asarray(rows, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] < 1 or mat.shape[1] < 1:
        raise DimMismatch(f"{what}: expected a (n>=1, d>=1) matrix, got shape {mat.shape}")
    if not np.isfinite(mat).all():
        raise AdapterError(f"{what}: non-finite feature values")
    norms = np.linalg.norm(mat, axis=1)
    if float(norms.min()) < _NORM_FLOOR:
        bad = int(np.argmin(norms))
        raise AdapterError(f"{what}: row {bad} has near-zero norm, cannot normalize")
    unit = mat / norms[:, None]
    moved = float(np.linalg.norm(unit - mat, axis=1).max())
    return unit, moved > RENORM_REPORT_TOL


def bag_bytes(slide_id: str, patches: np.ndarray, label: int | None = None,
              coords: np.ndarray | None = None) -> bytes:
    """Serialize one slide to the canonical bag layout.

    ``patches`` must already be unit-norm rows; use :func:`normalize_rows`
    first when converting foreign archives.
    """
    mat = np.asarray(patches, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] < 1:
        raise DimMismatch(f"patches must be (n>=1, d), got {mat.shape}")
    n, d = mat.shape
    if coords is not None:
        coords = np.asarray(coords)
        if coords.shape != (n, 2):
            raise DimMismatch(f"coords shape {coords.shape} does not match {n} patches")
    out = bytearray()
    out += BAG_MAGIC
    out += struct.pack("<HH", FORMAT_VERSION, 1 if coords is not None else 0)
    out += struct.pack("<II", d, n)
    out += np.ascontiguousarray(mat, dtype="<f4").tobytes()
    if coords is not None:
        out += np.ascontiguousarray(coords, dtype="<i4").tobytes()
    out += struct.pack("<i", -1 if label is None else int(label))
    out += _pack_str(slide_id)
    return bytes(out)


def write_bag_file(path, slide_id: str, patches: np.ndarray, label: int | None = None,
                   coords: np.ndarray | None = None) -> None:
    data = bag_bytes(slide_id, patches, label=label, coords=coords)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)


def prompt_bytes(class_names: list[str], W: np.ndarray, background_names: list[str],
                 W_beta: np.ndarray, template: str) -> bytes:
    W = np.asarray(W, dtype=np.float64)
    W_beta = np.asarray(W_beta, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != len(class_names):
        raise DimMismatch("foreground matrix rows must match class_names")
    if W_beta.ndim != 2 or W_beta.shape[0] != len(background_names):
        raise DimMismatch("background matrix rows must match background_names")
    if W_beta.shape[0] and W_beta.shape[1] != W.shape[1]:
        raise DimMismatch("background prompt dimension differs from foreground")
    out = bytearray()
    out += PROMPT_MAGIC
    out += struct.pack("<H", FORMAT_VERSION)
    out += struct.pack("<III", W.shape[1], W.shape[0], W_beta.shape[0])
    out += _pack_str(template)
    for name in class_names:
        out += _pack_str(name)
    for name in background_names:
        out += _pack_str(name)
    out += np.ascontiguousarray(W, dtype="<f4").tobytes()
    out += np.ascontiguousarray(W_beta, dtype="<f4").tobytes()
    return bytes(out)


def write_prompt_file(path, class_names: list[str], W: np.ndarray,
                      background_names: list[str], W_beta: np.ndarray,
                      template: str) -> None:
    data = prompt_bytes(class_names, W, background_names, W_beta, template)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)


def manifest_text(dataset_id: str, embedding_dim: int, class_names: list[str],
                  rows: list[tuple[str, str, int, int]]) -> str:
    """Render a manifest; rows are (slide_id, relative path, label, n_patches)."""
    header = json.dumps(
        {
            "dataset_id": dataset_id,
            "embedding_dim": int(embedding_dim),
            "class_names": list(class_names),
        },
        sort_keys=True,
    )
    lines = [header]
    for slide_id, rel_path, label, n_patches in rows:
        lines.append(f"{slide_id}\t{rel_path}\t{int(label)}\t{int(n_patches)}")
    return "\n".join(lines) + "\n"


def write_manifest_file(path, dataset_id: str, embedding_dim: int,
                        class_names: list[str],
                        rows: list[tuple[str, str, int, int]]) -> None:
    text = manifest_text(dataset_id, embedding_dim, class_names, rows)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(text.encode("utf-8"))
