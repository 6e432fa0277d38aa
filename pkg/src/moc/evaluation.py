"""Inference paths, metrics, cross-fold aggregation, and ablation drivers.

Two ways to classify a slide: the zero-shot baseline (top-K pooling
straight over the cosine-similarity matrix, nothing trained) and the full
pipeline (nomination, per-patch mixing weights, pooling). Metrics are
macro one-vs-rest AUC over softmax probabilities and plain accuracy,
aggregated across folds as mean and population standard deviation.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .bank import CONFIDENCE_PEAK, canonical_bank, ranking_score, score_bank
from .errors import DegenerateLabels, FormatViolation, LengthMismatch, MissingCoords
from .linalg import softmax
from .meta import MetaLearner, forward_weights_batch
from .splits import FewShotSplit
from .store import BagStore, PromptSet, SlideBag, _read_file, _write_file
from .training import (
    FUSION_META,
    FUSION_SUM,
    TrainConfig,
    map_ordered,
    slide_forward,
    topk_pool,
    train,
)


@dataclass(frozen=True)
class SlidePrediction:
    slide_id: str
    logits: np.ndarray         # (C,)
    probabilities: np.ndarray  # softmax of logits, sums to 1
    predicted_class: int       # argmax, lowest index on ties

    @classmethod
    def from_logits(cls, slide_id: str, logits: np.ndarray) -> "SlidePrediction":
        logits = np.asarray(logits, dtype=np.float64)
        probs = softmax(logits)
        return cls(slide_id, logits, probs, int(np.argmax(probs)))


@dataclass(frozen=True)
class FoldMetrics:
    fold_index: int
    auc: float
    acc: float
    n_test: int


def zero_shot_predict(bag: SlideBag, prompts: PromptSet, topk: int) -> SlidePrediction:
    """Baseline with no trained parameters: pool the raw cosine rows.

    Top-K pooling is applied directly to the patch-vs-prompt similarity
    matrix; no nomination and no mixing, so the output is independent of
    any training split.
    """
    tables = score_bank(bag, prompts, bank=(CONFIDENCE_PEAK,))
    pooled, _ = topk_pool(tables[0].scores, topk)
    return SlidePrediction.from_logits(bag.slide_id, pooled)


def moc_predict(bag: SlideBag, prompts: PromptSet, meta: MetaLearner | None, config: TrainConfig) -> SlidePrediction:
    logits, _ = slide_forward(bag, prompts, meta, config)
    return SlidePrediction.from_logits(bag.slide_id, logits)


# -- metrics ------------------------------------------------------------------

def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks in ascending order; tied values share their mean rank."""
    _, inverse, counts = np.unique(values, return_inverse=True, return_counts=True)
    last = np.cumsum(counts).astype(np.float64)
    return (last - (counts - 1) / 2.0)[inverse]


def _binary_auc(scores: np.ndarray, positive: np.ndarray) -> float:
    n_pos = int(positive.sum())
    n_neg = positive.shape[0] - n_pos
    ranks = _average_ranks(scores)
    # Mann-Whitney U: ties contribute 0.5 through the averaged ranks
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_macro_ovr(scores: np.ndarray, labels: np.ndarray) -> float:
    """Macro one-vs-rest AUC of an (N, C) score matrix.

    Each class needs at least one positive and one negative sample; for
    C=2 this equals the usual binary AUC of the positive-class score.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 2 or scores.shape[0] != labels.shape[0]:
        raise LengthMismatch(f"scores {scores.shape} vs {labels.shape[0]} labels")
    n, C = scores.shape
    if n < 2:
        raise DegenerateLabels(f"need at least 2 samples, got {n}")
    per_class = []
    for c in range(C):
        positive = labels == c
        if not positive.any() or positive.all():
            raise DegenerateLabels(f"class {c} has no positives or no negatives")
        per_class.append(_binary_auc(scores[:, c], positive))
    return float(np.mean(per_class))


def accuracy(preds: np.ndarray, labels: np.ndarray) -> float:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape or preds.size < 1:
        raise LengthMismatch(f"preds {preds.shape} vs labels {labels.shape}")
    return float(np.mean(preds == labels))


@dataclass(frozen=True)
class AggregateMetrics:
    auc_mean: float
    auc_std: float
    acc_mean: float
    acc_std: float
    n_folds: int


def aggregate_folds(folds: list[FoldMetrics]) -> AggregateMetrics:
    """Mean and population standard deviation of AUC and accuracy."""
    if not folds:
        raise LengthMismatch("no folds to aggregate")
    aucs = np.asarray([f.auc for f in folds], dtype=np.float64)
    accs = np.asarray([f.acc for f in folds], dtype=np.float64)
    return AggregateMetrics(
        float(aucs.mean()), float(aucs.std(ddof=0)),
        float(accs.mean()), float(accs.std(ddof=0)),
        len(folds),
    )


# -- fold evaluation -------------------------------------------------------------

def _test_labels(store: BagStore, slide_ids) -> np.ndarray:
    return np.asarray([store.label(sid) for sid in slide_ids])


def evaluate_fold(store: BagStore, prompts: PromptSet, split: FewShotSplit,
                  meta: MetaLearner | None, config: TrainConfig) -> tuple[FoldMetrics, list[SlidePrediction]]:
    """Metrics of the (trained or summation) pipeline on the fold's test slides."""
    labels = _test_labels(store, split.test_ids)
    predict = lambda sid: moc_predict(store.get(sid), prompts, meta, config)
    preds = map_ordered(predict, split.test_ids, config.threads)
    probs = np.stack([p.probabilities for p in preds])
    metrics = FoldMetrics(
        split.fold_index,
        auc_macro_ovr(probs, labels),
        accuracy(np.asarray([p.predicted_class for p in preds]), labels),
        len(split.test_ids),
    )
    return metrics, preds


def zero_shot_fold(store: BagStore, prompts: PromptSet, split: FewShotSplit,
                   topk: int, threads: int = 1) -> tuple[FoldMetrics, list[SlidePrediction]]:
    labels = _test_labels(store, split.test_ids)
    predict = lambda sid: zero_shot_predict(store.get(sid), prompts, topk)
    preds = map_ordered(predict, split.test_ids, threads)
    probs = np.stack([p.probabilities for p in preds])
    metrics = FoldMetrics(
        split.fold_index,
        auc_macro_ovr(probs, labels),
        accuracy(np.asarray([p.predicted_class for p in preds]), labels),
        len(split.test_ids),
    )
    return metrics, preds


# -- ablation ------------------------------------------------------------------

@dataclass(frozen=True)
class AblationRow:
    bank: tuple[str, ...]
    fusion: str
    auc_mean: float
    auc_std: float
    acc_mean: float
    acc_std: float
    n_folds: int

    @property
    def method(self) -> str:
        return f"{self.fusion}[{'+'.join(self.bank)}]"


def run_ablation(store: BagStore, prompts: PromptSet, splits: list[FewShotSplit],
                 config: TrainConfig, bank_subsets: list[tuple[str, ...]],
                 include_summation: bool = True) -> list[AblationRow]:
    """Train and score the pipeline restricted to each classifier subset.

    Every subset gets the trained-mixing route; with include_summation the
    fixed equal-weight summation (nothing trained) runs on the same subset
    for comparison. Rows come back in subset order, summation last per
    subset.
    """
    rows = []
    for subset in bank_subsets:
        subset = canonical_bank(subset)
        meta_cfg = replace(config, bank=subset, fusion=FUSION_META).validate()
        folds = []
        for split in splits:
            meta, _ = train(store, prompts, split, meta_cfg)
            metrics, _ = evaluate_fold(store, prompts, split, meta, meta_cfg)
            folds.append(metrics)
        agg = aggregate_folds(folds)
        rows.append(AblationRow(subset, FUSION_META, agg.auc_mean, agg.auc_std,
                                agg.acc_mean, agg.acc_std, agg.n_folds))
        if include_summation:
            sum_cfg = replace(config, bank=subset, fusion=FUSION_SUM).validate()
            folds = [evaluate_fold(store, prompts, split, None, sum_cfg)[0] for split in splits]
            agg = aggregate_folds(folds)
            rows.append(AblationRow(subset, FUSION_SUM, agg.auc_mean, agg.auc_std,
                                    agg.acc_mean, agg.acc_std, agg.n_folds))
    return rows


# -- patch-score export -----------------------------------------------------------

def export_patch_scores(bag: SlideBag, prompts: PromptSet, meta: MetaLearner | None,
                        config: TrainConfig, path) -> None:
    """CSV with one row per patch for qualitative inspection.

    Columns: patch index, grid coords, each classifier's ranking score and
    a flag marking its nominated top-q patches, the mixing weights (when a
    meta-learner is given, otherwise the equal weights of the summation
    route), and the mixed logits. Rows are ordered by patch index and
    floats printed with repr, so re-export is byte-identical.
    """
    from .nomination import nominate

    if bag.coords is None:
        raise MissingCoords(f"slide {bag.slide_id!r} carries no patch coordinates")
    config = config.validate()
    tables = score_bank(bag, prompts, bank=config.bank,
                        temperature=config.certainty_temperature,
                        standardize=config.standardize_scores)
    nom = nominate(bag, prompts, config.q, bank=config.bank, tables=tables)
    n, C = bag.n_patches, prompts.n_classes
    H = len(config.bank)
    if meta is None or config.fusion == FUSION_SUM:
        lam = np.ones((n, H))
    else:
        lam, _ = forward_weights_batch(meta, bag.patches, normalize=config.meta_softmax)
    S = np.stack([np.asarray(t.expand(C), dtype=np.float64) for t in tables])
    mixed = np.einsum("bh,hbc->bc", lam, S)

    flags = np.zeros((n, H), dtype=np.int64)
    for h, cid in enumerate(config.bank):
        flags[nom.per_classifier[cid], h] = 1

    cols = ["patch", "x", "y"]
    cols += [f"score_{cid}" for cid in config.bank]
    cols += [f"nominated_{cid}" for cid in config.bank]
    if meta is not None and config.fusion != FUSION_SUM:
        cols += [f"lambda_{cid}" for cid in config.bank]
    cols += [f"logit_{name}" for name in prompts.class_names]
    lines = [",".join(cols)]
    ranks = np.stack([ranking_score(t) for t in tables], axis=1)  # (n, H)
    for i in range(n):
        row = [str(i), str(int(bag.coords[i, 0])), str(int(bag.coords[i, 1]))]
        row += [repr(float(v)) for v in ranks[i]]
        row += [str(int(v)) for v in flags[i]]
        if meta is not None and config.fusion != FUSION_SUM:
            row += [repr(float(v)) for v in lam[i]]
        row += [repr(float(v)) for v in mixed[i]]
        lines.append(",".join(row))
    _write_file(path, ("\n".join(lines) + "\n").encode("utf-8"))


# -- metrics file ------------------------------------------------------------------

METRIC_COLUMNS = ("method", "shots", "fold", "auc", "acc")


@dataclass(frozen=True)
class MetricsRow:
    method: str
    shots: int
    fold: int
    auc: float
    acc: float


def fold_rows(method: str, shots: int, folds: list[FoldMetrics]) -> list[MetricsRow]:
    return [MetricsRow(method, shots, f.fold_index, f.auc, f.acc) for f in folds]


def metrics_text(rows: list[MetricsRow], header: dict | None = None) -> str:
    lines = [json.dumps(header or {}, sort_keys=True), "\t".join(METRIC_COLUMNS)]
    for r in rows:
        lines.append(f"{r.method}\t{r.shots}\t{r.fold}\t{float(r.auc)!r}\t{float(r.acc)!r}")
    return "\n".join(lines) + "\n"


def write_metrics(rows: list[MetricsRow], path, header: dict | None = None) -> None:
    _write_file(path, metrics_text(rows, header).encode("utf-8"))


def read_metrics(path) -> tuple[dict, list[MetricsRow]]:
    lines = _read_file(path).decode("utf-8").splitlines()
    if len(lines) < 2 or lines[1] != "\t".join(METRIC_COLUMNS):
        raise FormatViolation(f"{path}: not a metrics file")
    try:
        header = json.loads(lines[0])
        rows = []
        for ln in lines[2:]:
            method, shots, fold, auc, acc = ln.split("\t")
            rows.append(MetricsRow(method, int(shots), int(fold), float(auc), float(acc)))
    except (json.JSONDecodeError, ValueError) as exc:
        raise FormatViolation(f"{path}: bad metrics file: {exc}") from exc
    return header, rows
