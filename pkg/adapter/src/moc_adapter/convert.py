"""Convert a foreign patch-feature archive into canonical bag files."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .archive import ArchiveDescriptor, iter_slides, read_slide
from .errors import DimMismatch, MissingLabel
from .formats import bag_bytes, manifest_text, normalize_rows

MANIFEST_NAME = "manifest.tsv"
REPORT_NAME = "conversion.tsv"
BAG_DIR = "bags"


@dataclass(frozen=True)
class SlideRecord:
    slide_id: str
    label: int
    n_patches: int
    renormalized: bool


@dataclass(frozen=True)
class ConvertedDataset:
    """What a conversion produced: enough to locate and sanity-check it."""

    dataset_id: str
    embedding_dim: int
    class_names: tuple[str, ...]
    slides: tuple[SlideRecord, ...]
    out_dir: Path

    @property
    def manifest_path(self) -> Path:
        return self.out_dir / MANIFEST_NAME

    @property
    def n_renormalized(self) -> int:
        return sum(1 for s in self.slides if s.renormalized)


def _resolve_classes(slide_ids, labels: Mapping[str, str],
                     class_names) -> tuple[tuple[str, ...], dict[str, int]]:
    for sid in slide_ids:
        if sid not in labels:
            raise MissingLabel(f"slide {sid!r} has no entry in the label table")
    if class_names is None:
        class_names = sorted({labels[sid] for sid in slide_ids})
    class_names = tuple(class_names)
    index = {name: i for i, name in enumerate(class_names)}
    if len(index) != len(class_names):
        raise MissingLabel(f"duplicate class names: {class_names}")
    for sid in slide_ids:
        if labels[sid] not in index:
            raise MissingLabel(
                f"slide {sid!r} is labeled {labels[sid]!r}, not one of {', '.join(class_names)}"
            )
    return class_names, index


def report_text(dataset: ConvertedDataset) -> str:
    lines = ["slide_id\tn_patches\trenormalized"]
    for s in dataset.slides:
        lines.append(f"{s.slide_id}\t{s.n_patches}\t{int(s.renormalized)}")
    return "\n".join(lines) + "\n"


def convert_features(descriptor: ArchiveDescriptor, labels: Mapping[str, str], out_dir,
                     dataset_id: str | None = None, class_names=None,
                     threads: int = 1) -> ConvertedDataset:
    """Read every slide in the archive and write bags + manifest under ``out_dir``.

    ``labels`` maps slide id to class name; ``class_names`` fixes the label
    order (default: sorted names seen in the table). Rows are re-normalized
    to unit length and each slide records whether that moved any row by
    more than 1e-3. Re-running over the same archive rewrites identical
    bytes, so conversions are safe to repeat.
    """
    out_dir = Path(out_dir)
    slide_ids = iter_slides(descriptor)
    class_names, class_index = _resolve_classes(slide_ids, labels, class_names)
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")

    def load(slide_id: str):
        features, coords = read_slide(descriptor, slide_id)
        unit, renormed = normalize_rows(features, f"slide {slide_id!r}")
        return unit, coords, renormed

    if threads == 1:
        loaded = [load(sid) for sid in slide_ids]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            loaded = list(pool.map(load, slide_ids))

    dim = loaded[0][0].shape[1]
    for slide_id, (unit, _, _) in zip(slide_ids, loaded):
        if unit.shape[1] != dim:
            raise DimMismatch(
                f"slide {slide_id!r} has dim {unit.shape[1]}, expected {dim} from {slide_ids[0]!r}"
            )
    records = []
    rows = []
    (out_dir / BAG_DIR).mkdir(parents=True, exist_ok=True)
    for slide_id, (unit, coords, renormed) in zip(slide_ids, loaded):
        label = class_index[labels[slide_id]]
        rel_path = f"{BAG_DIR}/{slide_id}.mocb"
        (out_dir / rel_path).write_bytes(bag_bytes(slide_id, unit, label=label, coords=coords))
        records.append(SlideRecord(slide_id, label, unit.shape[0], renormed))
        rows.append((slide_id, rel_path, label, unit.shape[0]))

    if dataset_id is None:
        dataset_id = Path(descriptor.source).name
    dataset = ConvertedDataset(
        dataset_id=dataset_id,
        embedding_dim=dim,
        class_names=class_names,
        slides=tuple(records),
        out_dir=out_dir,
    )
    text = manifest_text(dataset_id, dim, list(class_names), rows)
    (out_dir / MANIFEST_NAME).write_bytes(text.encode("utf-8"))
    (out_dir / REPORT_NAME).write_bytes(report_text(dataset).encode("utf-8"))
    return dataset
