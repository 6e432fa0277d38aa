"""Top-K pooling, cross-entropy objective, and the few-shot training loop.

Slide forward pass: score the bank, nominate the union bag, compute
per-patch mixing weights and mixed logits, then average the K largest
logits per class. Scoring and nomination do not depend on the trainable
parameters, so they are computed once per slide and cached across epochs.

Training uses Adam with one update per slide; the slide order is shuffled
each epoch by a dedicated seeded generator, and every reduction runs in a
fixed order, so two runs with the same seed produce bit-identical
checkpoints.
"""
from __future__ import annotations

import dataclasses
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bank import CLASSIFIER_IDS, canonical_bank, score_bank
from .errors import (
    EmptyTrainingSet,
    FormatViolation,
    LabelOutOfRange,
    NonFiniteLoss,
    SpecInvalid,
)
from .meta import (
    MetaGrads,
    MetaLearner,
    backward_batch,
    checkpoint_sha256,
    forward_weights_batch,
    init_meta,
)
from .nomination import NominatedBag, nominate
from .splits import FewShotSplit
from .store import BagStore, PromptSet, SlideBag, _read_file, _write_file

FUSION_META = "meta"
FUSION_SUM = "sum"


@dataclass(frozen=True)
class TrainConfig:
    q: int = 1000
    topk: int = 150
    lr: float = 1e-3
    epochs: int = 100
    patience: int = 20
    hidden: int = 128
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    bank: tuple[str, ...] = CLASSIFIER_IDS
    fusion: str = FUSION_META              # "meta" | "sum"
    meta_softmax: bool = True              # convex mixing weights; False = raw linear head
    certainty_temperature: float = 1.0
    standardize_scores: bool = False
    no_nomination: bool = False
    threads: int = 1

    def validate(self) -> "TrainConfig":
        if min(self.q, self.topk, self.epochs, self.patience, self.hidden) < 1:
            raise SpecInvalid("q, topk, epochs, patience, hidden must all be >= 1")
        if self.lr <= 0:
            raise SpecInvalid(f"learning rate must be positive, got {self.lr}")
        if self.patience > self.epochs:
            raise SpecInvalid(f"patience {self.patience} exceeds epochs {self.epochs}")
        if self.fusion not in (FUSION_META, FUSION_SUM):
            raise SpecInvalid(f"fusion must be 'meta' or 'sum', got {self.fusion!r}")
        if self.threads < 1:
            raise SpecInvalid("threads must be >= 1")
        object.__setattr__(self, "bank", canonical_bank(self.bank))
        return self


def map_ordered(fn, items, threads: int):
    """Order-preserving map, optionally over a thread pool (pure fns only)."""
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def topk_pool(patch_logits: np.ndarray, k: int):
    """Column-wise mean of the K largest entries (K truncated to the rows).

    Returns (pooled (C,), selected (K_eff, C) row indices per class). Ties
    select the lowest row index, fixing the subgradient deterministically.
    """
    if patch_logits.ndim != 2 or patch_logits.shape[0] < 1:
        raise ValueError(f"expected (n, C) logits, got shape {patch_logits.shape}")
    if k < 1:
        raise ValueError(f"K must be >= 1, got {k}")
    k_eff = min(k, patch_logits.shape[0])
    order = np.argsort(-patch_logits, axis=0, kind="stable")
    selected = order[:k_eff, :]
    pooled = np.take_along_axis(patch_logits, selected, axis=0).mean(axis=0)
    return pooled, selected


def ce_loss(slide_logits: np.ndarray, label: int):
    """Cross entropy of softmax(logits) against the label, plus its gradient."""
    logits = np.asarray(slide_logits, dtype=np.float64)
    if not 0 <= label < logits.shape[0]:
        raise LabelOutOfRange(f"label {label} outside [0, {logits.shape[0]})")
    z = logits - logits.max()
    logsumexp = float(np.log(np.exp(z).sum()))
    loss = logsumexp - float(z[label])
    grad = np.exp(z - logsumexp)
    grad[label] -= 1.0
    return loss, grad


@dataclass
class SlideCompute:
    """Everything the per-epoch passes need for one slide (parameter-free)."""

    slide_id: str
    label: int | None
    U: np.ndarray          # (B, d) nominated patch embeddings
    S: np.ndarray          # (H, B, C) expanded score tables
    nominated: NominatedBag


def precompute_slide(bag: SlideBag, prompts: PromptSet, config: TrainConfig) -> SlideCompute:
    """Score the bank and nominate once; neither depends on the meta-learner."""
    tables = score_bank(
        bag,
        prompts,
        bank=config.bank,
        temperature=config.certainty_temperature,
        standardize=config.standardize_scores,
    )
    if config.no_nomination:
        nom = NominatedBag(bag.slide_id, np.arange(bag.n_patches), {})
    else:
        nom = nominate(bag, prompts, config.q, bank=config.bank, tables=tables)
    idx = nom.indices
    C = prompts.n_classes
    S = np.stack([np.asarray(t.expand(C), dtype=np.float64)[idx] for t in tables])
    return SlideCompute(bag.slide_id, bag.label, bag.patches[idx], S, nom)


@dataclass
class SlideCache:
    """Forward-pass intermediates for one slide, as needed by backward."""

    comp: SlideCompute
    lam: np.ndarray          # (B, H)
    hidden: tuple | None     # (Z1, A1) from the meta-learner, None for sum fusion
    patch_logits: np.ndarray  # (B, C)
    selected: np.ndarray     # (K_eff, C)
    pooled: np.ndarray       # (C,)


def _forward_cached(comp: SlideCompute, meta: MetaLearner | None, config: TrainConfig) -> SlideCache:
    H, B, _ = comp.S.shape
    if config.fusion == FUSION_SUM:
        lam, hidden = np.ones((B, H)), None
    else:
        lam, hidden = forward_weights_batch(meta, comp.U, normalize=config.meta_softmax)
    patch_logits = np.einsum("bh,hbc->bc", lam, comp.S)
    pooled, selected = topk_pool(patch_logits, config.topk)
    return SlideCache(comp, lam, hidden, patch_logits, selected, pooled)


def _backward_cached(cache: SlideCache, meta: MetaLearner, config: TrainConfig, dpooled: np.ndarray, grads: MetaGrads) -> None:
    comp = cache.comp
    k_eff = cache.selected.shape[0]
    dP = np.zeros_like(cache.patch_logits)
    np.put_along_axis(dP, cache.selected, (dpooled / k_eff)[None, :], axis=0)
    dlam = np.einsum("bc,hbc->bh", dP, comp.S)
    backward_batch(meta, comp.U, cache.hidden, cache.lam, dlam, grads, normalize=config.meta_softmax)


def slide_forward(bag: SlideBag, prompts: PromptSet, meta: MetaLearner | None, config: TrainConfig):
    """Full pipeline for one slide; returns (slide logits, cache for backward)."""
    comp = precompute_slide(bag, prompts, config)
    cache = _forward_cached(comp, meta, config)
    return cache.pooled, cache


def slide_backward(cache: SlideCache, meta: MetaLearner, config: TrainConfig, dlogits: np.ndarray) -> MetaGrads:
    """Gradients of a scalar loss with upstream dL/d(slide logits)."""
    grads = MetaGrads.zeros_like(meta)
    _backward_cached(cache, meta, config, np.asarray(dlogits, dtype=np.float64), grads)
    return grads


# -- optimizer ----------------------------------------------------------------

@dataclass
class AdamState:
    step: int
    m: list[np.ndarray]
    v: list[np.ndarray]

    @classmethod
    def zeros_like(cls, model: MetaLearner) -> "AdamState":
        return cls(0, [np.zeros_like(p) for p in model.params()], [np.zeros_like(p) for p in model.params()])


def adam_step(model: MetaLearner, grads: MetaGrads, state: AdamState, config: TrainConfig) -> None:
    state.step += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    bias1 = 1.0 - b1**state.step
    bias2 = 1.0 - b2**state.step
    for p, g, m, v in zip(model.params(), grads.arrays(), state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= config.lr * (m / bias1) / (np.sqrt(v / bias2) + config.adam_eps)


# -- training loop --------------------------------------------------------------

@dataclass
class TrainReport:
    losses: list[float] = field(default_factory=list)
    val_aucs: list[float] = field(default_factory=list)
    selected_epoch: int = -1
    checkpoint_sha256: str = ""

    @property
    def epochs_run(self) -> int:
        return len(self.losses)


def _val_auc(comps: list[SlideCompute], meta, config) -> float:
    from .evaluation import auc_macro_ovr  # local import avoids a cycle

    probs = []
    labels = []
    for comp in comps:
        cache = _forward_cached(comp, meta, config)
        z = cache.pooled - cache.pooled.max()
        e = np.exp(z)
        probs.append(e / e.sum())
        labels.append(comp.label)
    return auc_macro_ovr(np.stack(probs), np.asarray(labels))


def train(store: BagStore, prompts: PromptSet, split: FewShotSplit, config: TrainConfig):
    """Train the meta-learner on one fold; returns (meta, report).

    Adam updates after each slide; early stopping tracks validation AUC
    with the configured patience, and the parameters of the best epoch
    (earliest on ties) are returned.
    """
    config = config.validate()
    if config.fusion != FUSION_META:
        raise SpecInvalid("only the meta fusion has trainable parameters")
    if not split.train_ids:
        raise EmptyTrainingSet(f"fold {split.fold_index} has no training slides")

    pre = lambda sid: precompute_slide(store.get(sid), prompts, config)
    train_comps = map_ordered(pre, split.train_ids, config.threads)
    val_comps = map_ordered(pre, split.val_ids, config.threads)

    children = np.random.SeedSequence(config.seed).spawn(2)
    meta = init_meta(store.manifest.embedding_dim, config.hidden, len(config.bank), children[0])
    shuffle_rng = np.random.default_rng(children[1])
    adam = AdamState.zeros_like(meta)

    report = TrainReport()
    best_auc = -np.inf
    best_epoch = -1
    best_params = meta.copy()

    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(train_comps))
        total = 0.0
        for i in order:
            comp = train_comps[int(i)]
            cache = _forward_cached(comp, meta, config)
            loss, dpooled = ce_loss(cache.pooled, comp.label)
            if not np.isfinite(loss):
                raise NonFiniteLoss(
                    f"non-finite loss on slide {comp.slide_id!r} at epoch {epoch} "
                    f"(logits {cache.pooled.tolist()})"
                )
            grads = MetaGrads.zeros_like(meta)
            _backward_cached(cache, meta, config, dpooled, grads)
            adam_step(meta, grads, adam, config)
            total += loss
        report.losses.append(total / len(train_comps))

        val_auc = _val_auc(val_comps, meta, config) if val_comps else float("nan")
        report.val_aucs.append(val_auc)
        if val_comps and val_auc > best_auc:
            best_auc = val_auc
            best_epoch = epoch
            best_params = meta.copy()
        if val_comps and epoch - best_epoch >= config.patience:
            break

    if not val_comps:  # no validation slides: keep the final parameters
        best_epoch = report.epochs_run - 1
        best_params = meta.copy()
    report.selected_epoch = best_epoch
    report.checkpoint_sha256 = checkpoint_sha256(best_params)
    return best_params, report


# -- train report file -----------------------------------------------------------

def report_text(report: TrainReport) -> str:
    header = json.dumps(
        {
            "selected_epoch": report.selected_epoch,
            "epochs_run": report.epochs_run,
            "checkpoint_sha256": report.checkpoint_sha256,
        },
        sort_keys=True,
    )
    lines = [header, "epoch\tloss\tval_auc"]
    for epoch, (loss, auc) in enumerate(zip(report.losses, report.val_aucs)):
        lines.append(f"{epoch}\t{float(loss)!r}\t{float(auc)!r}")
    return "\n".join(lines) + "\n"


def write_report(report: TrainReport, path) -> None:
    _write_file(path, report_text(report).encode("utf-8"))


def read_report(path) -> TrainReport:
    lines = _read_file(path).decode("utf-8").splitlines()
    if len(lines) < 2:
        raise FormatViolation(f"{path}: truncated train report")
    try:
        header = json.loads(lines[0])
        report = TrainReport(
            selected_epoch=int(header["selected_epoch"]),
            checkpoint_sha256=str(header["checkpoint_sha256"]),
        )
        for ln in lines[2:]:
            _, loss, auc = ln.split("\t")
            report.losses.append(float(loss))
            report.val_aucs.append(float(auc))
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise FormatViolation(f"{path}: bad train report: {exc}") from exc
    return report


def config_to_kv(config: TrainConfig) -> dict[str, str]:
    out = {}
    for f in dataclasses.fields(TrainConfig):
        value = getattr(config, f.name)
        out[f.name] = ",".join(value) if f.name == "bank" else str(value)
    return out


def config_from_kv(mapping: dict[str, str], base: TrainConfig | None = None, source: str = "<config>") -> TrainConfig:
    from .config import parse_bool

    base = base or TrainConfig()
    kwargs: dict = {}
    types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    for key, value in mapping.items():
        if key not in types:
            raise FormatViolation(f"{source}: unknown config key {key!r}")
        if key == "bank":
            kwargs[key] = canonical_bank(value.split(","))
        elif key == "fusion":
            kwargs[key] = value
        elif key in ("meta_softmax", "standardize_scores", "no_nomination"):
            kwargs[key] = parse_bool(value, key)
        elif key in ("lr", "adam_beta1", "adam_beta2", "adam_eps", "certainty_temperature"):
            kwargs[key] = float(value)
        else:
            kwargs[key] = int(value)
    return dataclasses.replace(base, **kwargs).validate()
