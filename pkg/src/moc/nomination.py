"""Per-classifier top-q election and the union bag fed to the mixer.

Each classifier elects its top-q patches by ranking score (q truncated to
the slide's patch count); the nominated bag is the sorted, de-duplicated
union of the elections, with per-classifier lists kept for diagnostics
and score export.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bank import CLASSIFIER_IDS, ScoreTable, canonical_bank, ranking_score, score_bank
from .errors import IndexOutOfRange
from .linalg import top_k_indices
from .store import PromptSet, SlideBag


@dataclass
class NominatedBag:
    slide_id: str
    indices: np.ndarray                      # ascending, de-duplicated union
    per_classifier: dict[str, np.ndarray]    # classifier_id -> ascending elected indices

    @property
    def size(self) -> int:
        return int(self.indices.shape[0])


def elect_bag(ranking: np.ndarray, q: int) -> np.ndarray:
    """Indices of the min(q, n) top-ranked patches, ascending."""
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    return np.sort(top_k_indices(ranking, q))


def union_bags(slide_id: str, per_classifier: dict[str, np.ndarray], n_patches: int) -> NominatedBag:
    """Sorted de-duplicated union of per-classifier elections."""
    if not per_classifier:
        raise ValueError("need at least one election list")
    for cid, idx in per_classifier.items():
        arr = np.asarray(idx)
        if arr.size and (arr.min() < 0 or arr.max() >= n_patches):
            raise IndexOutOfRange(f"{cid} elected an index outside [0, {n_patches})")
    merged = np.unique(np.concatenate([np.asarray(v, dtype=np.int64) for v in per_classifier.values()]))
    return NominatedBag(slide_id=slide_id, indices=merged, per_classifier=dict(per_classifier))


def nominate(
    bag: SlideBag,
    prompts: PromptSet,
    q: int,
    bank: tuple[str, ...] = CLASSIFIER_IDS,
    tables: list[ScoreTable] | None = None,
    temperature: float = 1.0,
    standardize: bool = False,
) -> NominatedBag:
    """Score every bank classifier, elect top-q per classifier, union.

    Pass ``tables`` to reuse score tables computed elsewhere.
    """
    if tables is None:
        tables = score_bank(bag, prompts, bank=canonical_bank(bank), temperature=temperature, standardize=standardize)
    elections = {t.classifier_id: elect_bag(ranking_score(t), q) for t in tables}
    return union_bags(bag.slide_id, elections, bag.n_patches)
