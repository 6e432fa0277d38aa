"""Few-shot whole-slide classification with a meta-learned classifier mix.

Pipeline: embed patches (elsewhere), score them with a bank of fixed
non-parametric classifiers, nominate a candidate patch union, mix the
classifier scores per patch with a small trained network, pool the top-K
logits per class, and read off the slide label.
"""
from .bank import (
    BACKGROUND_SUPPRESSION,
    CLASSIFIER_IDS,
    CONFIDENCE_PEAK,
    DIVERGENCE_EXTREMUM,
    NORMALIZED_CERTAINTY,
    ScoreTable,
    canonical_bank,
    score_bank,
)
from .errors import DataError, MocError, NumericError
from .evaluation import (
    FoldMetrics,
    SlidePrediction,
    accuracy,
    aggregate_folds,
    auc_macro_ovr,
    evaluate_fold,
    export_patch_scores,
    moc_predict,
    run_ablation,
    zero_shot_predict,
)
from .meta import MetaLearner, forward_weights, init_meta, mix_scores, read_checkpoint, write_checkpoint
from .nomination import NominatedBag, nominate
from .splits import FewShotSplit, read_splits, sample_few_shot_splits, write_splits
from .store import (
    BagStore,
    DatasetManifest,
    PromptSet,
    SlideBag,
    ensemble_prompts,
    read_bag,
    read_manifest,
    read_prompts,
    write_bag,
    write_manifest,
    write_prompts,
)
from .synthetic import SyntheticSpec, generate_synthetic, write_dataset
from .training import TrainConfig, TrainReport, ce_loss, slide_forward, topk_pool, train

__version__ = "0.1.0"

__all__ = [
    "BACKGROUND_SUPPRESSION",
    "CLASSIFIER_IDS",
    "CONFIDENCE_PEAK",
    "DIVERGENCE_EXTREMUM",
    "NORMALIZED_CERTAINTY",
    "BagStore",
    "DataError",
    "DatasetManifest",
    "FewShotSplit",
    "FoldMetrics",
    "MetaLearner",
    "MocError",
    "NominatedBag",
    "NumericError",
    "PromptSet",
    "ScoreTable",
    "SlideBag",
    "SlidePrediction",
    "SyntheticSpec",
    "TrainConfig",
    "TrainReport",
    "accuracy",
    "aggregate_folds",
    "auc_macro_ovr",
    "canonical_bank",
    "ce_loss",
    "ensemble_prompts",
    "evaluate_fold",
    "export_patch_scores",
    "forward_weights",
    "generate_synthetic",
    "init_meta",
    "mix_scores",
    "moc_predict",
    "nominate",
    "read_bag",
    "read_checkpoint",
    "read_manifest",
    "read_prompts",
    "read_splits",
    "run_ablation",
    "sample_few_shot_splits",
    "score_bank",
    "slide_forward",
    "topk_pool",
    "train",
    "write_bag",
    "write_checkpoint",
    "write_dataset",
    "write_manifest",
    "write_prompts",
    "write_splits",
    "zero_shot_predict",
]
