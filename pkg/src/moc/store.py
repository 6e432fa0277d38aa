"""Canonical on-disk formats and the in-memory dataset types.

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
    one JSON header line ``{"dataset_id", "embedding_dim", "class_names"}``
    followed by one tab-separated line per slide:
    ``slide_id<TAB>relative bag path<TAB>label<TAB>patch count``.

Embeddings are stored single-precision and widened to float64 on load; the
loader re-verifies that every row is unit-norm within 1e-6.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatch,
    FormatViolation,
    IoFailure,
    LabelOutOfRange,
    NonFiniteValue,
    NormTooSmall,
)
from .linalg import l2_normalize

BAG_MAGIC = b"MOCB"
PROMPT_MAGIC = b"MOCP"
FORMAT_VERSION = 1
ROW_NORM_TOL = 1e-6

DEFAULT_TEMPLATE = "A pathology image of {}"
DEFAULT_BACKGROUND_NAMES = (
    "stromal tissue",
    "inflammatory tissue",
    "vascular tissue",
    "necrotic tissue",
)


def _check_unit_rows(rows: np.ndarray, what: str) -> None:
    if rows.shape[0] == 0:
        return
    norms = np.linalg.norm(rows, axis=1)
    err = np.abs(norms - 1.0)
    if float(err.max()) > ROW_NORM_TOL:
        bad = int(np.argmax(err))
        raise FormatViolation(f"{what} row {bad} has norm {norms[bad]:.8f}, not unit within {ROW_NORM_TOL:g}")


@dataclass
class SlideBag:
    """One whole slide: its patch embeddings plus optional label/coords."""

    slide_id: str
    patches: np.ndarray                 # (n, d) float64, unit-norm rows
    label: int | None = None
    coords: np.ndarray | None = None    # (n, 2) int32 pixel origins

    @property
    def n_patches(self) -> int:
        return int(self.patches.shape[0])

    @property
    def dim(self) -> int:
        return int(self.patches.shape[1])

    def validate(self) -> None:
        if self.patches.ndim != 2 or self.patches.shape[0] < 1:
            raise DimensionMismatch(f"patches must be (n>=1, d), got {self.patches.shape}")
        if not np.isfinite(self.patches).all():
            raise NonFiniteValue(f"bag {self.slide_id!r} contains non-finite embeddings")
        _check_unit_rows(self.patches, f"bag {self.slide_id!r}")
        if self.coords is not None and self.coords.shape != (self.n_patches, 2):
            raise DimensionMismatch(
                f"coords shape {self.coords.shape} does not match {self.n_patches} patches"
            )


@dataclass
class PromptSet:
    """Foreground and background prompt embeddings with their class names."""

    class_names: list[str]
    W: np.ndarray                       # (C, d) unit-norm rows
    background_names: list[str] = field(default_factory=list)
    W_beta: np.ndarray | None = None    # (Cb, d) unit-norm rows
    template: str = DEFAULT_TEMPLATE

    def __post_init__(self):
        if self.W_beta is None:
            self.W_beta = np.zeros((0, self.W.shape[1]), dtype=np.float64)

    @property
    def n_classes(self) -> int:
        return int(self.W.shape[0])

    @property
    def n_background(self) -> int:
        return int(self.W_beta.shape[0])

    @property
    def dim(self) -> int:
        return int(self.W.shape[1])

    def validate(self) -> None:
        if self.W.ndim != 2 or self.W.shape[0] < 2:
            raise DimensionMismatch(f"need >= 2 foreground prompts, got shape {self.W.shape}")
        if len(self.class_names) != self.n_classes:
            raise DimensionMismatch("class_names length does not match W rows")
        if self.W_beta.ndim != 2 or self.W_beta.shape[1] != self.dim:
            raise DimensionMismatch("background prompt dimension differs from foreground")
        if len(self.background_names) != self.n_background:
            raise DimensionMismatch("background_names length does not match W_beta rows")
        for mat, what in ((self.W, "prompt"), (self.W_beta, "background prompt")):
            if mat.size and not np.isfinite(mat).all():
                raise NonFiniteValue(f"{what} matrix contains non-finite values")
            _check_unit_rows(mat, what)


def ensemble_prompts(variants) -> np.ndarray:
    """Average template variants of one class and re-normalize."""
    mat = np.asarray(variants, dtype=np.float64)
    if mat.ndim == 1:
        mat = mat[None, :]
    if mat.ndim != 2 or mat.shape[0] < 1:
        raise DimensionMismatch(f"expected >= 1 variant embeddings, got shape {mat.shape}")
    return l2_normalize(mat.mean(axis=0))


# -- binary primitives -----------------------------------------------------

def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise FormatViolation(f"string too long to store ({len(raw)} bytes)")
    return struct.pack("<H", len(raw)) + raw


class _Cursor:
    """Bounds-checked reader over a byte buffer."""

    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.data):
            raise FormatViolation(f"{self.path}: truncated file (needed {count} bytes at offset {self.pos})")
        out = self.data[self.pos : self.pos + count]
        self.pos += count
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def take_str(self) -> str:
        (length,) = self.unpack("<H")
        try:
            return self.take(length).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatViolation(f"{self.path}: invalid UTF-8 string") from exc

    def expect_end(self) -> None:
        if self.pos != len(self.data):
            raise FormatViolation(f"{self.path}: {len(self.data) - self.pos} trailing bytes")


def _read_file(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def _write_file(path, data: bytes) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


# -- bag files ---------------------------------------------------------------

def bag_bytes(bag: SlideBag) -> bytes:
    """Serialize a bag to the canonical byte layout."""
    bag.validate()
    n, d = bag.patches.shape
    flags = 1 if bag.coords is not None else 0
    out = bytearray()
    out += BAG_MAGIC
    out += struct.pack("<HH", FORMAT_VERSION, flags)
    out += struct.pack("<II", d, n)
    out += np.ascontiguousarray(bag.patches, dtype="<f4").tobytes()
    if bag.coords is not None:
        out += np.ascontiguousarray(bag.coords, dtype="<i4").tobytes()
    out += struct.pack("<i", -1 if bag.label is None else int(bag.label))
    out += _pack_str(bag.slide_id)
    return bytes(out)


def write_bag(bag: SlideBag, path) -> None:
    _write_file(path, bag_bytes(bag))


def read_bag(path) -> SlideBag:
    cur = _Cursor(_read_file(path), path)
    if cur.take(4) != BAG_MAGIC:
        raise FormatViolation(f"{path}: bad magic, not a bag file")
    version, flags = cur.unpack("<HH")
    if version != FORMAT_VERSION:
        raise FormatViolation(f"{path}: unsupported bag version {version}")
    if flags & ~1:
        raise FormatViolation(f"{path}: unknown flag bits 0x{flags:04x}")
    d, n = cur.unpack("<II")
    if n < 1 or d < 1:
        raise FormatViolation(f"{path}: degenerate dimensions n={n}, d={d}")
    patches = np.frombuffer(cur.take(4 * n * d), dtype="<f4").reshape(n, d).astype(np.float64)
    coords = None
    if flags & 1:
        coords = np.frombuffer(cur.take(8 * n), dtype="<i4").reshape(n, 2).astype(np.int32)
    (label,) = cur.unpack("<i")
    slide_id = cur.take_str()
    cur.expect_end()
    if not np.isfinite(patches).all():
        raise NonFiniteValue(f"{path}: non-finite embedding values")
    bag = SlideBag(slide_id=slide_id, patches=patches, label=None if label < 0 else label, coords=coords)
    _check_unit_rows(patches, f"{path}")
    return bag


# -- prompt files ------------------------------------------------------------

def prompt_bytes(prompts: PromptSet) -> bytes:
    prompts.validate()
    out = bytearray()
    out += PROMPT_MAGIC
    out += struct.pack("<H", FORMAT_VERSION)
    out += struct.pack("<III", prompts.dim, prompts.n_classes, prompts.n_background)
    out += _pack_str(prompts.template)
    for name in prompts.class_names:
        out += _pack_str(name)
    for name in prompts.background_names:
        out += _pack_str(name)
    out += np.ascontiguousarray(prompts.W, dtype="<f4").tobytes()
    out += np.ascontiguousarray(prompts.W_beta, dtype="<f4").tobytes()
    return bytes(out)


def write_prompts(prompts: PromptSet, path) -> None:
    _write_file(path, prompt_bytes(prompts))


def read_prompts(path) -> PromptSet:
    cur = _Cursor(_read_file(path), path)
    if cur.take(4) != PROMPT_MAGIC:
        raise FormatViolation(f"{path}: bad magic, not a prompt file")
    (version,) = cur.unpack("<H")
    if version != FORMAT_VERSION:
        raise FormatViolation(f"{path}: unsupported prompt version {version}")
    d, n_fg, n_bg = cur.unpack("<III")
    template = cur.take_str()
    class_names = [cur.take_str() for _ in range(n_fg)]
    background_names = [cur.take_str() for _ in range(n_bg)]
    W = np.frombuffer(cur.take(4 * n_fg * d), dtype="<f4").reshape(n_fg, d).astype(np.float64)
    W_beta = np.frombuffer(cur.take(4 * n_bg * d), dtype="<f4").reshape(n_bg, d).astype(np.float64)
    cur.expect_end()
    prompts = PromptSet(
        class_names=class_names,
        W=W,
        background_names=background_names,
        W_beta=W_beta,
        template=template,
    )
    prompts.validate()
    return prompts


# -- dataset manifest ----------------------------------------------------------

@dataclass
class ManifestEntry:
    slide_id: str
    path: str        # relative to the manifest's directory
    label: int
    n_patches: int


@dataclass
class DatasetManifest:
    dataset_id: str
    embedding_dim: int
    class_names: list[str]
    slides: list[ManifestEntry]
    base_dir: Path | None = None

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def validate(self) -> None:
        seen = set()
        for entry in self.slides:
            if entry.slide_id in seen:
                raise FormatViolation(f"duplicate slide_id {entry.slide_id!r} in manifest")
            seen.add(entry.slide_id)
            if not 0 <= entry.label < self.n_classes:
                raise LabelOutOfRange(
                    f"slide {entry.slide_id!r} has label {entry.label}, outside [0, {self.n_classes})"
                )

    def entry(self, slide_id: str) -> ManifestEntry:
        for e in self.slides:
            if e.slide_id == slide_id:
                return e
        raise FormatViolation(f"slide {slide_id!r} is not in manifest {self.dataset_id!r}")

    def bag_path(self, slide_id: str) -> Path:
        rel = Path(self.entry(slide_id).path)
        return rel if self.base_dir is None else self.base_dir / rel

    def ids_by_class(self) -> list[list[str]]:
        groups: list[list[str]] = [[] for _ in range(self.n_classes)]
        for e in self.slides:
            groups[e.label].append(e.slide_id)
        return groups


def manifest_text(manifest: DatasetManifest) -> str:
    manifest.validate()
    header = json.dumps(
        {
            "dataset_id": manifest.dataset_id,
            "embedding_dim": manifest.embedding_dim,
            "class_names": list(manifest.class_names),
        },
        sort_keys=True,
    )
    lines = [header]
    for e in manifest.slides:
        lines.append(f"{e.slide_id}\t{e.path}\t{e.label}\t{e.n_patches}")
    return "\n".join(lines) + "\n"


def write_manifest(manifest: DatasetManifest, path) -> None:
    _write_file(path, manifest_text(manifest).encode("utf-8"))


def read_manifest(path) -> DatasetManifest:
    text = _read_file(path).decode("utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise FormatViolation(f"{path}: empty manifest")
    try:
        header = json.loads(lines[0])
        dataset_id = header["dataset_id"]
        dim = int(header["embedding_dim"])
        class_names = list(header["class_names"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatViolation(f"{path}: bad manifest header: {exc}") from exc
    slides = []
    for ln in lines[1:]:
        parts = ln.split("\t")
        if len(parts) != 4:
            raise FormatViolation(f"{path}: expected 4 tab-separated fields, got {len(parts)}: {ln!r}")
        try:
            slides.append(ManifestEntry(parts[0], parts[1], int(parts[2]), int(parts[3])))
        except ValueError as exc:
            raise FormatViolation(f"{path}: bad manifest row {ln!r}") from exc
    manifest = DatasetManifest(
        dataset_id=dataset_id,
        embedding_dim=dim,
        class_names=class_names,
        slides=slides,
        base_dir=Path(path).parent,
    )
    manifest.validate()
    return manifest


class BagStore:
    """Lazy bag loader over a manifest, caching loaded slides in memory."""

    def __init__(self, manifest: DatasetManifest):
        self.manifest = manifest
        self._cache: dict[str, SlideBag] = {}

    def get(self, slide_id: str) -> SlideBag:
        if slide_id not in self._cache:
            entry = self.manifest.entry(slide_id)
            bag = read_bag(self.manifest.bag_path(slide_id))
            if bag.dim != self.manifest.embedding_dim:
                raise DimensionMismatch(
                    f"bag {slide_id!r} has dim {bag.dim}, manifest says {self.manifest.embedding_dim}"
                )
            if bag.n_patches != entry.n_patches:
                raise FormatViolation(
                    f"bag {slide_id!r} has {bag.n_patches} patches, manifest says {entry.n_patches}"
                )
            if bag.label is not None and bag.label != entry.label:
                raise FormatViolation(
                    f"bag {slide_id!r} has label {bag.label}, manifest says {entry.label}"
                )
            if bag.label is None:
                bag = replace(bag, label=entry.label)
            self._cache[slide_id] = bag
        return self._cache[slide_id]

    def label(self, slide_id: str) -> int:
        return self.manifest.entry(slide_id).label
