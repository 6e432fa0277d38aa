"""Few-shot split sampling and the split file format.

Each fold first partitions every class into test / validation / training
pool (so the test and validation sets do not depend on the shot count),
then draws exactly ``shots`` training slides per class from the pool.

Split file: one JSON header line ``{"shots", "n_folds", "val_size",
"test_size", "seed"}``, then one tab-separated line per assignment:
``fold<TAB>role<TAB>slide_id`` with role in {train, val, test}.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import FormatViolation, InsufficientSlides
from .store import DatasetManifest, _read_file, _write_file

ROLES = ("train", "val", "test")


@dataclass
class FewShotSplit:
    fold_index: int
    shots: int
    seed: int
    train_ids: list[str]
    val_ids: list[str]
    test_ids: list[str]


def _per_class_counts(total: int, n_classes: int) -> list[int]:
    # Distribute a total count as evenly as possible; earlier classes take
    # the remainder so the outcome is deterministic.
    base, rem = divmod(total, n_classes)
    return [base + (1 if c < rem else 0) for c in range(n_classes)]


def sample_few_shot_splits(
    manifest: DatasetManifest,
    shots: int,
    n_folds: int,
    val_size: int,
    test_size: int,
    seed: int,
) -> list[FewShotSplit]:
    """Draw ``n_folds`` independent label-stratified splits.

    Deterministic given ``seed``; the test/val partitions of a fold are
    identical for every ``shots`` value under the same seed.
    """
    if shots < 1 or n_folds < 1:
        raise ValueError("shots and n_folds must be >= 1")
    groups = manifest.ids_by_class()
    n_classes = len(groups)
    val_counts = _per_class_counts(val_size, n_classes)
    test_counts = _per_class_counts(test_size, n_classes)
    for c, ids in enumerate(groups):
        needed = shots + val_counts[c] + test_counts[c]
        if len(ids) < needed:
            raise InsufficientSlides(
                f"class {c} ({manifest.class_names[c]!r}) has {len(ids)} slides, "
                f"needs {needed} (shots={shots}, val={val_counts[c]}, test={test_counts[c]})"
            )

    children = np.random.SeedSequence(seed).spawn(n_folds)
    splits = []
    for fold in range(n_folds):
        rng = np.random.default_rng(children[fold])
        train_ids: list[str] = []
        val_ids: list[str] = []
        test_ids: list[str] = []
        for c, ids in enumerate(groups):
            perm = [ids[i] for i in rng.permutation(len(ids))]
            test_ids.extend(perm[: test_counts[c]])
            val_ids.extend(perm[test_counts[c] : test_counts[c] + val_counts[c]])
            pool = perm[test_counts[c] + val_counts[c] :]
            train_ids.extend(pool[:shots])
        splits.append(
            FewShotSplit(
                fold_index=fold,
                shots=shots,
                seed=seed,
                train_ids=train_ids,
                val_ids=val_ids,
                test_ids=test_ids,
            )
        )
    return splits


def splits_text(splits: list[FewShotSplit]) -> str:
    if not splits:
        raise ValueError("no splits to write")
    header = json.dumps(
        {
            "shots": splits[0].shots,
            "n_folds": len(splits),
            "val_size": len(splits[0].val_ids),
            "test_size": len(splits[0].test_ids),
            "seed": splits[0].seed,
        },
        sort_keys=True,
    )
    lines = [header]
    for s in splits:
        for role, ids in zip(ROLES, (s.train_ids, s.val_ids, s.test_ids)):
            for sid in ids:
                lines.append(f"{s.fold_index}\t{role}\t{sid}")
    return "\n".join(lines) + "\n"


def write_splits(splits: list[FewShotSplit], path) -> None:
    _write_file(path, splits_text(splits).encode("utf-8"))


def read_splits(path) -> list[FewShotSplit]:
    text = _read_file(path).decode("utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise FormatViolation(f"{path}: empty split file")
    try:
        header = json.loads(lines[0])
        shots = int(header["shots"])
        n_folds = int(header["n_folds"])
        seed = int(header["seed"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatViolation(f"{path}: bad split header: {exc}") from exc
    splits = [
        FewShotSplit(fold_index=f, shots=shots, seed=seed, train_ids=[], val_ids=[], test_ids=[])
        for f in range(n_folds)
    ]
    for ln in lines[1:]:
        parts = ln.split("\t")
        if len(parts) != 3 or parts[1] not in ROLES:
            raise FormatViolation(f"{path}: bad split row {ln!r}")
        try:
            fold = int(parts[0])
        except ValueError as exc:
            raise FormatViolation(f"{path}: bad fold index in {ln!r}") from exc
        if not 0 <= fold < n_folds:
            raise FormatViolation(f"{path}: fold {fold} outside [0, {n_folds})")
        split = splits[fold]
        {"train": split.train_ids, "val": split.val_ids, "test": split.test_ids}[parts[1]].append(parts[2])
    return splits
