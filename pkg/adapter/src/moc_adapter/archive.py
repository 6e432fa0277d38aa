"""Reading patch-feature archives in the layouts extractors commonly emit.

Three layouts are supported, selected by :class:`ArchiveDescriptor.layout`:

``hierarchical-array-archive``
    one HDF5 file per slide (``<slide_id>.h5`` / ``.hdf5``) holding a

    features dataset and optionally a coordinates dataset, keyed by
    ``feature_key`` / ``coord_key``.
``serialized-tensor-file``
    one ``.npz`` (keyed arrays), ``.npy`` (bare feature matrix), or
    ``.pt``/``.pth`` (keyed tensors or a bare tensor; needs torch) per slide.
``delimited-text``
    one ``.csv`` / ``.tsv`` per slide with a header row; columns named
    ``x`` and ``y`` become patch coordinates, every other column is a
    feature dimension in file order.

Slide ids are file stems; iteration order is sorted so downstream
artifacts are deterministic.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AdapterError, DimMismatch, UnknownLayout

LAYOUTS = (
    "hierarchical-array-archive",
    "serialized-tensor-file",
    "delimited-text",
)

_EXTENSIONS = {
    "hierarchical-array-archive": (".h5", ".hdf5"),
    "serialized-tensor-file": (".npz", ".npy", ".pt", ".pth"),
    "delimited-text": (".csv", ".tsv"),
}

COORD_COLUMNS = ("x", "y")


@dataclass(frozen=True)
class ArchiveDescriptor:
    """Where an archive lives and how to interpret its files."""

    source: Path
    layout: str
    feature_key: str = "features"
    coord_key: str | None = "coords"

    def validate(self) -> None:
        if self.layout not in LAYOUTS:
            raise UnknownLayout(
                f"layout {self.layout!r} is not supported; known layouts: {', '.join(LAYOUTS)}"
            )
        if not Path(self.source).is_dir():
            raise UnknownLayout(f"archive source {self.source} is not a directory")


def iter_slides(descriptor: ArchiveDescriptor) -> list[str]:
    """Sorted slide ids present in the archive."""
    descriptor.validate()
    source = Path(descriptor.source)
    stems: dict[str, Path] = {}
    for ext in _EXTENSIONS[descriptor.layout]:
        for path in source.glob(f"*{ext}"):
            if path.stem in stems:
                raise UnknownLayout(
                    f"slide {path.stem!r} appears twice ({stems[path.stem].name}, {path.name})"
                )
            stems[path.stem] = path
    if not stems:
        exts = ", ".join(_EXTENSIONS[descriptor.layout])
        raise UnknownLayout(f"{source} holds no {exts} files for layout {descriptor.layout!r}")
    return sorted(stems)


def _slide_path(descriptor: ArchiveDescriptor, slide_id: str) -> Path:
    source = Path(descriptor.source)
    for ext in _EXTENSIONS[descriptor.layout]:
        candidate = source / f"{slide_id}{ext}"
        if candidate.is_file():
            return candidate
    raise UnknownLayout(f"slide {slide_id!r} not found under {source}")


def _as_feature_matrix(arr, path: Path) -> np.ndarray:
    mat = np.asarray(arr, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] < 1 or mat.shape[1] < 1:
        raise DimMismatch(f"{path.name}: features must be a (n>=1, d>=1) matrix, got shape {mat.shape}")
    return mat


def _as_coords(arr, n: int, path: Path) -> np.ndarray:
    coords = np.asarray(arr)
    if coords.shape != (n, 2):
        raise DimMismatch(f"{path.name}: coords shape {coords.shape} does not match {n} patches")
    return coords.astype(np.int32)


def _read_hdf5(descriptor: ArchiveDescriptor, path: Path):
    import h5py

    with h5py.File(path, "r") as handle:
        if descriptor.feature_key not in handle:
            raise UnknownLayout(f"{path.name}: no dataset {descriptor.feature_key!r}")
        features = _as_feature_matrix(handle[descriptor.feature_key][()], path)
        coords = None
        if descriptor.coord_key is not None and descriptor.coord_key in handle:
            coords = _as_coords(handle[descriptor.coord_key][()], features.shape[0], path)
    return features, coords


def _read_tensor_file(descriptor: ArchiveDescriptor, path: Path):
    if path.suffix == ".npy":
        return _as_feature_matrix(np.load(path), path), None
    if path.suffix == ".npz":
        with np.load(path) as handle:
            if descriptor.feature_key not in handle:
                raise UnknownLayout(f"{path.name}: no array {descriptor.feature_key!r}")
            features = _as_feature_matrix(handle[descriptor.feature_key], path)
            coords = None
            if descriptor.coord_key is not None and descriptor.coord_key in handle:
                coords = _as_coords(handle[descriptor.coord_key], features.shape[0], path)
        return features, coords
    try:
        import torch
    except ImportError as exc:
        raise AdapterError(
            f"reading {path.name} requires torch; install it or convert the archive to .npz"
        ) from exc
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if isinstance(payload, dict):
        if descriptor.feature_key not in payload:
            raise UnknownLayout(f"{path.name}: no tensor {descriptor.feature_key!r}")
        features = _as_feature_matrix(payload[descriptor.feature_key].numpy(), path)
        coords = None
        if descriptor.coord_key is not None and descriptor.coord_key in payload:
            coords = _as_coords(payload[descriptor.coord_key].numpy(), features.shape[0], path)
        return features, coords
    return _as_feature_matrix(payload.numpy(), path), None


def _read_delimited(path: Path):
    delimiter = "\t" if path.suffix == ".tsv" else ","
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise UnknownLayout(f"{path.name}: empty file") from None
        rows = [row for row in reader if row]
    coord_idx = [i for i, name in enumerate(header) if name.strip().lower() in COORD_COLUMNS]
    feat_idx = [i for i in range(len(header)) if i not in coord_idx]
    if len(coord_idx) not in (0, 2):
        raise UnknownLayout(f"{path.name}: coordinate columns must be both of x,y or neither")
    if not feat_idx:
        raise UnknownLayout(f"{path.name}: no feature columns")
    try:
        table = np.asarray([[float(row[i]) for i in range(len(header))] for row in rows])
    except (ValueError, IndexError) as exc:
        raise UnknownLayout(f"{path.name}: malformed row: {exc}") from exc
    if table.size == 0:
        raise DimMismatch(f"{path.name}: no data rows")
    features = _as_feature_matrix(table[:, feat_idx], path)
    coords = None
    if coord_idx:
        # preserve x,y order regardless of column position
        ordered = sorted(coord_idx, key=lambda i: COORD_COLUMNS.index(header[i].strip().lower()))
        coords = _as_coords(table[:, ordered], features.shape[0], path)
    return features, coords


def read_slide(descriptor: ArchiveDescriptor, slide_id: str):
    """Load one slide as ``(features (n, d) float64, coords (n, 2) int32 | None)``."""
    descriptor.validate()
    path = _slide_path(descriptor, slide_id)
    if descriptor.layout == "hierarchical-array-archive":
        return _read_hdf5(descriptor, path)
    if descriptor.layout == "serialized-tensor-file":
        return _read_tensor_file(descriptor, path)
    return _read_delimited(path)
