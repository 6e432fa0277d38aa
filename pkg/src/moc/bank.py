"""The bank of four non-parametric per-patch classifiers.

Each scorer maps (patch embeddings, prompt set) to a score table:

confidence_peak         cosine similarity to every class prompt, (n, C)
normalized_certainty    softmax over those similarities, (n, C)
divergence_extremum     gap between the two best class similarities, (n,)
background_suppression  negated summed similarity to background prompts, (n,)

Matrix-valued tables carry one column per class; scalar tables broadcast
the same score to every class during mixing. Raw score scales are kept as
the formulas produce them (an optional per-slide standardization switch
exists for experiments).
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptySubset,
    NeedAtLeastTwoClasses,
    NoBackgroundPrompts,
)
from .store import PromptSet, SlideBag

CONFIDENCE_PEAK = "confidence_peak"
NORMALIZED_CERTAINTY = "normalized_certainty"
DIVERGENCE_EXTREMUM = "divergence_extremum"
BACKGROUND_SUPPRESSION = "background_suppression"

CLASSIFIER_IDS = (
    CONFIDENCE_PEAK,
    NORMALIZED_CERTAINTY,
    DIVERGENCE_EXTREMUM,
    BACKGROUND_SUPPRESSION,
)

VECTOR_PER_CLASS = "vector_per_class"
SCALAR_PER_PATCH = "scalar_per_patch"

_SHORT_ALIASES = {
    "peak": CONFIDENCE_PEAK,
    "certainty": NORMALIZED_CERTAINTY,
    "divergence": DIVERGENCE_EXTREMUM,
    "background": BACKGROUND_SUPPRESSION,
}


def canonical_bank(ids) -> tuple[str, ...]:
    """Resolve classifier names/aliases into canonical order, rejecting unknowns."""
    resolved = set()
    for raw in ids:
        name = _SHORT_ALIASES.get(raw.strip(), raw.strip())
        if name not in CLASSIFIER_IDS:
            raise EmptySubset(f"unknown classifier id {raw!r}; valid: {', '.join(CLASSIFIER_IDS)}")
        resolved.add(name)
    if not resolved:
        raise EmptySubset("classifier bank subset is empty")
    return tuple(cid for cid in CLASSIFIER_IDS if cid in resolved)


def parse_bank_arg(text: str) -> tuple[str, ...]:
    """Comma-separated classifier ids or aliases, e.g. "peak,background"."""
    return canonical_bank([part for part in text.split(",") if part.strip()])


@dataclass
class ScoreTable:
    """Per-patch output of one candidate classifier."""

    classifier_id: str
    kind: str                 # VECTOR_PER_CLASS (n, C) or SCALAR_PER_PATCH (n,)
    scores: np.ndarray

    @property
    def n_patches(self) -> int:
        return int(self.scores.shape[0])

    def expand(self, n_classes: int) -> np.ndarray:
        """View of the scores as an (n, C) matrix, broadcasting scalars."""
        if self.kind == VECTOR_PER_CLASS:
            return self.scores
        return np.broadcast_to(self.scores[:, None], (self.n_patches, n_classes))


def _similarities(bag: SlideBag, prompt_rows: np.ndarray) -> np.ndarray:
    if bag.dim != prompt_rows.shape[1]:
        raise DimensionMismatch(
            f"bag dim {bag.dim} does not match prompt dim {prompt_rows.shape[1]}"
        )
    return bag.patches @ prompt_rows.T


def score_confidence_peak(bag: SlideBag, prompts: PromptSet) -> ScoreTable:
    """scores[i, c] = cosine similarity of patch i to class prompt c."""
    return ScoreTable(CONFIDENCE_PEAK, VECTOR_PER_CLASS, _similarities(bag, prompts.W))


def score_normalized_certainty(bag: SlideBag, prompts: PromptSet, temperature: float = 1.0) -> ScoreTable:
    """scores[i, :] = softmax over class similarities of patch i."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    sims = _similarities(bag, prompts.W) / temperature
    z = np.exp(sims - sims.max(axis=1, keepdims=True))
    return ScoreTable(NORMALIZED_CERTAINTY, VECTOR_PER_CLASS, z / z.sum(axis=1, keepdims=True))


def score_divergence_extremum(bag: SlideBag, prompts: PromptSet) -> ScoreTable:
    """scores[i] = best class similarity minus second-best; always >= 0."""
    if prompts.n_classes < 2:
        raise NeedAtLeastTwoClasses(f"divergence needs >= 2 classes, got {prompts.n_classes}")
    sims = np.sort(_similarities(bag, prompts.W), axis=1)
    return ScoreTable(DIVERGENCE_EXTREMUM, SCALAR_PER_PATCH, sims[:, -1] - sims[:, -2])


def score_background_suppression(bag: SlideBag, prompts: PromptSet) -> ScoreTable:
    """scores[i] = -sum of similarities to the background prompts."""
    if prompts.n_background < 1:
        raise NoBackgroundPrompts("background suppression needs >= 1 background prompt")
    sims = _similarities(bag, prompts.W_beta)
    return ScoreTable(BACKGROUND_SUPPRESSION, SCALAR_PER_PATCH, -sims.sum(axis=1))


_SCORERS = {
    CONFIDENCE_PEAK: lambda bag, prompts, temperature: score_confidence_peak(bag, prompts),
    NORMALIZED_CERTAINTY: score_normalized_certainty,
    DIVERGENCE_EXTREMUM: lambda bag, prompts, temperature: score_divergence_extremum(bag, prompts),
    BACKGROUND_SUPPRESSION: lambda bag, prompts, temperature: score_background_suppression(bag, prompts),
}


def standardize_table(table: ScoreTable) -> ScoreTable:
    """Per-slide standardization: zero mean, unit std over the whole table."""
    flat = table.scores
    std = float(flat.std())
    return replace(table, scores=(flat - flat.mean()) / max(std, 1e-12))


def score_bank(
    bag: SlideBag,
    prompts: PromptSet,
    bank: tuple[str, ...] = CLASSIFIER_IDS,
    temperature: float = 1.0,
    standardize: bool = False,
) -> list[ScoreTable]:
    """Score the bag with every classifier in ``bank`` (canonical order)."""
    bank = canonical_bank(bank)
    tables = [_SCORERS[cid](bag, prompts, temperature) for cid in bank]
    if standardize:
        tables = [standardize_table(t) for t in tables]
    return tables


def ranking_score(table: ScoreTable) -> np.ndarray:
    """Label-free per-patch ranking: row max for matrix tables, identity for scalars.

    A patch ranks high if it strongly matches ANY class.
    """
    if table.kind == VECTOR_PER_CLASS:
        return table.scores.max(axis=1)
    return table.scores.copy()
