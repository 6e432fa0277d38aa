"""Synthetic embedding datasets for desk-scale experiments.

Class and background prompt directions form a random orthonormal set;
tumor patches are drawn around their class direction plus isotropic noise
and re-normalized, background patches around a random background
direction. Two optional knobs create a classifier-quality mismatch: a
background component mixed into tumor patches, and "distractor" patches
anti-aligned with the background set, which make the raw
background-suppression score large, noisy, and class-uninformative.

Everything is deterministic given (spec, seed).
"""
from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import parse_kv_text, write_kv
from .errors import FormatViolation, SpecInvalid
from .store import (
    DEFAULT_BACKGROUND_NAMES,
    DEFAULT_TEMPLATE,
    DatasetManifest,
    ManifestEntry,
    PromptSet,
    SlideBag,
    bag_bytes,
    prompt_bytes,
    write_bag,
    write_manifest,
    write_prompts,
)

PATCH_PIXELS = 224  # grid pitch for generated patch coordinates


@dataclass(frozen=True)
class SyntheticSpec:
    dataset_id: str = "synthetic"
    classes: int = 2
    background_classes: int = 4
    dim: int = 64
    slides_per_class: int = 20
    patches_per_slide: int = 500
    tumor_fraction: float = 0.10
    noise: float = 0.35
    # scale-mismatch knobs (all default off)
    background_overlap: float = 0.0     # max background magnitude mixed into tumor patches
    distractor_fraction: float = 0.0    # fraction of non-tumor patches anti-aligned with backgrounds
    distractor_strength: float = 0.0
    distractor_mimic: float = 0.0       # false class signature mixed into distractor patches

    def validate(self) -> None:
        if self.classes < 2:
            raise SpecInvalid(f"need >= 2 classes, got {self.classes}")
        if self.background_classes < 0:
            raise SpecInvalid("background_classes must be >= 0")
        if self.dim < self.classes + self.background_classes:
            raise SpecInvalid(
                f"dim {self.dim} < classes + background_classes "
                f"{self.classes + self.background_classes}; cannot build an orthonormal prompt set"
            )
        if self.slides_per_class < 1 or self.patches_per_slide < 1:
            raise SpecInvalid("slides_per_class and patches_per_slide must be >= 1")
        if not 0.0 <= self.tumor_fraction <= 1.0:
            raise SpecInvalid(f"tumor_fraction must be in [0, 1], got {self.tumor_fraction}")
        if not 0.0 <= self.distractor_fraction <= 1.0:
            raise SpecInvalid(f"distractor_fraction must be in [0, 1], got {self.distractor_fraction}")
        if min(self.noise, self.background_overlap, self.distractor_strength, self.distractor_mimic) < 0.0:
            raise SpecInvalid("noise, background_overlap, distractor_strength, distractor_mimic must be >= 0")
        if self.tumor_fraction < 1.0 and self.background_classes == 0 and self.noise == 0.0:
            raise SpecInvalid("non-tumor patches need background prompts or noise > 0")
        if self.distractor_fraction > 0 and self.distractor_strength == 0 and self.noise == 0:
            raise SpecInvalid("distractor patches need distractor_strength or noise > 0")


DEFAULT_SPEC = SyntheticSpec()
DEFAULT_SEED = 7

# Engineered so the raw background-suppression score is large and
# class-uninformative: the distractor count exceeds the pooling K, so
# under naive equal-weight summation the distractors monopolize every
# per-class top-K pool and the (rare) tumor signal drowns. Each
# distractor also carries a weak false class signature, which keeps the
# per-class pools from collapsing to one shared set (whose scalar scores
# would cancel between classes) and gives the trained mixer a gradient
# path to shift weight onto the similarity score, where tumors win.
SCALE_MISMATCH_SPEC = SyntheticSpec(
    dataset_id="scale-mismatch",
    slides_per_class=30,
    tumor_fraction=0.04,
    noise=0.32,
    background_overlap=1.0,
    distractor_fraction=0.40,
    distractor_strength=3.0,
    distractor_mimic=0.4,
)

BUILTIN_SPECS = {
    "default": DEFAULT_SPEC,
    "scale-mismatch": SCALE_MISMATCH_SPEC,
}

_FLOAT_KEYS = ("tumor_fraction", "noise", "background_overlap", "distractor_fraction",
               "distractor_strength", "distractor_mimic")
_INT_KEYS = ("classes", "background_classes", "dim", "slides_per_class", "patches_per_slide")


def spec_from_kv(mapping: dict[str, str], source: str = "<spec>") -> SyntheticSpec:
    kwargs: dict = {}
    for key, value in mapping.items():
        if key == "dataset_id":
            kwargs[key] = value
        elif key in _INT_KEYS:
            kwargs[key] = int(value)
        elif key in _FLOAT_KEYS:
            kwargs[key] = float(value)
        else:
            raise FormatViolation(f"{source}: unknown synthetic-spec key {key!r}")
    spec = SyntheticSpec(**kwargs)
    spec.validate()
    return spec


def spec_to_kv(spec: SyntheticSpec) -> dict[str, str]:
    return {f.name: str(getattr(spec, f.name)) for f in dataclasses.fields(SyntheticSpec)}


def parse_spec_text(text: str, source: str = "<spec>") -> SyntheticSpec:
    return spec_from_kv(parse_kv_text(text, source=source), source=source)


def _orthonormal_rows(count: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Random orthonormal directions via modified Gram-Schmidt.

    Avoids LAPACK so the result is bit-stable across BLAS builds.
    """
    if count > dim:
        raise SpecInvalid(f"cannot build {count} orthonormal directions in dimension {dim}")
    out = np.zeros((count, dim))
    for i in range(count):
        v = rng.standard_normal(dim)
        for _ in range(2):  # re-orthogonalize once for numerical hygiene
            if i:
                v -= out[:i].T @ (out[:i] @ v)
        norm = float(np.linalg.norm(v))
        if norm < 1e-8:
            raise SpecInvalid("degenerate random direction; try another seed")
        out[i] = v / norm
    return out


def _class_names(n: int) -> list[str]:
    return [f"carcinoma subtype {chr(ord('a') + c)}" if c < 26 else f"carcinoma subtype {c}" for c in range(n)]


def _background_names(n: int) -> list[str]:
    names = list(DEFAULT_BACKGROUND_NAMES[:n])
    names += [f"background tissue {k}" for k in range(len(names), n)]
    return names


def _grid_coords(n: int) -> np.ndarray:
    side = max(1, math.isqrt(n - 1) + 1)
    j = np.arange(n)
    return np.stack([(j % side) * PATCH_PIXELS, (j // side) * PATCH_PIXELS], axis=1).astype(np.int32)


@dataclass
class SyntheticDataset:
    spec: SyntheticSpec
    seed: int
    prompts: PromptSet
    bags: list[SlideBag]

    def labels(self) -> list[int]:
        return [bag.label for bag in self.bags]


def generate_synthetic(spec: SyntheticSpec, seed: int) -> SyntheticDataset:
    """Generate prompts and labeled slide bags per the spec, deterministically."""
    spec.validate()
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n_dirs = spec.classes + spec.background_classes
    dirs = _orthonormal_rows(n_dirs, spec.dim, rng)
    W = dirs[: spec.classes]
    W_beta = dirs[spec.classes :]
    prompts = PromptSet(
        class_names=_class_names(spec.classes),
        W=W,
        background_names=_background_names(spec.background_classes),
        W_beta=W_beta,
        template=DEFAULT_TEMPLATE,
    )
    # unit vector the background-suppression score is most negative along
    if spec.background_classes:
        bg_axis = W_beta.sum(axis=0) / math.sqrt(spec.background_classes)
    else:
        bg_axis = np.zeros(spec.dim)

    n = spec.patches_per_slide
    n_tumor = int(round(spec.tumor_fraction * n))
    coords = _grid_coords(n)
    bags = []
    for c in range(spec.classes):
        for s in range(spec.slides_per_class):
            base = np.zeros((n, spec.dim))
            tumor_idx = np.sort(rng.choice(n, size=n_tumor, replace=False)) if n_tumor else np.empty(0, dtype=int)
            rest = np.setdiff1d(np.arange(n), tumor_idx)
            n_distract = int(round(spec.distractor_fraction * rest.size))
            distract_idx = np.sort(rng.choice(rest, size=n_distract, replace=False)) if n_distract else np.empty(0, dtype=int)
            bg_idx = np.setdiff1d(rest, distract_idx)

            base[tumor_idx] = W[c]
            if spec.background_overlap > 0 and tumor_idx.size:
                k = rng.integers(0, max(spec.background_classes, 1), size=tumor_idx.size)
                mags = rng.uniform(0.0, spec.background_overlap, size=tumor_idx.size)
                if spec.background_classes:
                    base[tumor_idx] += mags[:, None] * W_beta[k]
            if bg_idx.size and spec.background_classes:
                k = rng.integers(0, spec.background_classes, size=bg_idx.size)
                base[bg_idx] = W_beta[k]
            if distract_idx.size:
                base[distract_idx] = -spec.distractor_strength * bg_axis
                if spec.distractor_mimic > 0:
                    k = rng.integers(0, spec.classes, size=distract_idx.size)
                    base[distract_idx] += spec.distractor_mimic * W[k]

            vecs = base + spec.noise * rng.standard_normal((n, spec.dim))
            norms = np.linalg.norm(vecs, axis=1)
            if float(norms.min()) < 1e-9:
                raise SpecInvalid("generated a near-zero patch; increase noise")
            patches = vecs / norms[:, None]
            bags.append(
                SlideBag(
                    slide_id=f"{spec.dataset_id}-c{c}-{s:03d}",
                    patches=patches,
                    label=c,
                    coords=coords.copy(),
                )
            )
    return SyntheticDataset(spec=spec, seed=seed, prompts=prompts, bags=bags)


def write_dataset(dataset: SyntheticDataset, out_dir) -> DatasetManifest:
    """Write bags/, prompts.mocp, manifest.tsv, and the resolved spec config."""
    out = Path(out_dir)
    (out / "bags").mkdir(parents=True, exist_ok=True)
    entries = []
    for bag in dataset.bags:
        rel = f"bags/{bag.slide_id}.mocb"
        write_bag(bag, out / rel)
        entries.append(ManifestEntry(bag.slide_id, rel, bag.label, bag.n_patches))
    manifest = DatasetManifest(
        dataset_id=dataset.spec.dataset_id,
        embedding_dim=dataset.spec.dim,
        class_names=list(dataset.prompts.class_names),
        slides=entries,
        base_dir=out,
    )
    write_manifest(manifest, out / "manifest.tsv")
    write_prompts(dataset.prompts, out / "prompts.mocp")
    kv = spec_to_kv(dataset.spec)
    kv["seed"] = str(dataset.seed)
    write_kv(kv, out / "synthetic.config")
    return manifest


def dataset_checksum(dataset: SyntheticDataset) -> str:
    """SHA-256 over the canonical serialization of every bag plus the prompts."""
    h = hashlib.sha256()
    for bag in sorted(dataset.bags, key=lambda b: b.slide_id):
        h.update(bag_bytes(bag))
    h.update(prompt_bytes(dataset.prompts))
    return h.hexdigest()
