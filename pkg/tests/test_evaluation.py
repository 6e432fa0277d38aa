import dataclasses
import itertools

import numpy as np
import pytest

from moc import evaluation as ev, meta, splits as sp, synthetic, training as tr
from moc.errors import DegenerateLabels, EmptySubset, FormatViolation, LengthMismatch, MissingCoords
from conftest import UNIT_SPEC

FAST = tr.TrainConfig(q=20, topk=5, epochs=6, patience=6, hidden=8, seed=0)


def pair_count_auc(scores, labels):
    """O(n^2) oracle: P(score_pos > score_neg) + 0.5 P(tie)."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p, q in itertools.product(pos, neg):
        total += 1.0 if p > q else (0.5 if p == q else 0.0)
    return total / (len(pos) * len(neg))


def binary_probs(scores):
    s = np.asarray(scores, dtype=np.float64)
    return np.stack([-s, s], axis=1)


class TestAuc:
    def test_perfect_and_reversed(self):
        labels = np.array([0, 0, 1, 1])
        assert ev.auc_macro_ovr(binary_probs([0.1, 0.2, 0.8, 0.9]), labels) == 1.0
        assert ev.auc_macro_ovr(binary_probs([0.9, 0.8, 0.2, 0.1]), labels) == 0.0

    def test_worked_example(self):
        got = ev.auc_macro_ovr(binary_probs([0.1, 0.4, 0.35, 0.8]), np.array([0, 0, 1, 1]))
        assert abs(got - 0.75) < 1e-12

    def test_ties_count_half(self):
        got = ev.auc_macro_ovr(binary_probs([0.5, 0.5]), np.array([0, 1]))
        assert abs(got - 0.5) < 1e-12

    def test_matches_pair_count_oracle(self):
        rng = np.random.default_rng(0)
        for trial in range(200):
            n = int(rng.integers(2, 12))
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            # coarse grid forces frequent ties
            scores = rng.integers(0, 4, size=n) / 4.0
            want = pair_count_auc(scores, labels)
            got = ev.auc_macro_ovr(binary_probs(scores), labels)
            assert abs(got - want) < 1e-12, f"trial {trial}"

    def test_macro_averages_classes(self):
        rng = np.random.default_rng(1)
        labels = np.array([0, 1, 2, 0, 1, 2, 1, 0])
        scores = rng.standard_normal((8, 3))
        per_class = [
            pair_count_auc(scores[:, c], (labels == c).astype(int))
            for c in range(3)
        ]
        got = ev.auc_macro_ovr(scores, labels)
        assert abs(got - np.mean(per_class)) < 1e-12

    def test_monotone_transform_invariant(self):
        rng = np.random.default_rng(2)
        labels = rng.integers(0, 2, size=30)
        labels[:2] = [0, 1]
        scores = rng.standard_normal(30)
        base = ev.auc_macro_ovr(binary_probs(scores), labels)
        for f in (lambda s: 3 * s + 2, np.tanh, lambda s: np.exp(s / 2)):
            probs = np.stack([-f(scores), f(scores)], axis=1)
            assert abs(ev.auc_macro_ovr(probs, labels) - base) < 1e-12

    def test_random_scores_near_half(self):
        rng = np.random.default_rng(3)
        n = 10_000
        labels = rng.integers(0, 2, size=n)
        auc = ev.auc_macro_ovr(binary_probs(rng.standard_normal(n)), labels)
        assert abs(auc - 0.5) < 0.05

    def test_degenerate_labels(self):
        with pytest.raises(DegenerateLabels):
            ev.auc_macro_ovr(binary_probs([0.1, 0.2]), np.array([1, 1]))
        with pytest.raises(DegenerateLabels):
            ev.auc_macro_ovr(binary_probs([0.1]), np.array([1]))

    def test_shape_mismatch(self):
        with pytest.raises(LengthMismatch):
            ev.auc_macro_ovr(np.zeros((3, 2)), np.zeros(4, dtype=int))
        with pytest.raises(LengthMismatch):
            ev.auc_macro_ovr(np.zeros(3), np.zeros(3, dtype=int))


class TestAccuracy:
    def test_basic(self):
        assert ev.accuracy(np.array([0, 1, 1, 0]), np.array([0, 1, 0, 0])) == 0.75

    def test_empty(self):
        with pytest.raises(LengthMismatch):
            ev.accuracy(np.array([]), np.array([]))


class TestAggregate:
    def test_worked_example(self):
        folds = [ev.FoldMetrics(0, 0.8, 0.7, 4), ev.FoldMetrics(1, 0.9, 0.9, 4)]
        agg = ev.aggregate_folds(folds)
        assert abs(agg.auc_mean - 0.85) < 1e-12
        assert abs(agg.auc_std - 0.05) < 1e-12
        assert abs(agg.acc_mean - 0.8) < 1e-12
        assert agg.n_folds == 2

    def test_single_fold_zero_std(self):
        agg = ev.aggregate_folds([ev.FoldMetrics(0, 0.9, 0.8, 4)])
        assert agg.auc_std == 0.0 and agg.acc_std == 0.0

    def test_empty(self):
        with pytest.raises(LengthMismatch):
            ev.aggregate_folds([])


class TestPredictions:
    def test_from_logits(self):
        p = ev.SlidePrediction.from_logits("s", np.array([1.0, 3.0, 2.0]))
        assert p.predicted_class == 1
        assert abs(p.probabilities.sum() - 1.0) < 1e-12
        np.testing.assert_array_equal(np.argsort(p.logits), np.argsort(p.probabilities))

    def test_shift_invariant_class(self):
        a = ev.SlidePrediction.from_logits("s", np.array([1.0, 3.0, 2.0]))
        b = ev.SlidePrediction.from_logits("s", np.array([101.0, 103.0, 102.0]))
        assert a.predicted_class == b.predicted_class
        np.testing.assert_allclose(a.probabilities, b.probabilities, atol=1e-12)

    def test_tie_takes_lowest_class(self):
        p = ev.SlidePrediction.from_logits("s", np.zeros(4))
        assert p.predicted_class == 0


class TestZeroShot:
    def test_noise_free_slides_classified(self, unit_prompts):
        from moc.store import SlideBag

        spec = dataclasses.replace(UNIT_SPEC, noise=0.0, tumor_fraction=0.5, patches_per_slide=20)
        ds = synthetic.generate_synthetic(spec, 1)
        for bag in ds.bags:
            pred = ev.zero_shot_predict(bag, ds.prompts, topk=3)
            assert pred.predicted_class == bag.label

    def test_split_independent(self, unit_store, unit_prompts, unit_manifest):
        # same fold seed, different shot counts: identical test sets and
        # therefore identical zero-shot metrics
        metrics = []
        for shots in (1, 2):
            split = sp.sample_few_shot_splits(unit_manifest, shots, 1, 2, 4, seed=4)[0]
            m, preds = ev.zero_shot_fold(unit_store, unit_prompts, split, topk=5)
            metrics.append((m, tuple(p.slide_id for p in preds)))
        assert metrics[0][0] == metrics[1][0]
        assert metrics[0][1] == metrics[1][1]

    def test_k1_is_best_patch(self, unit_store, unit_prompts):
        bag = unit_store.get(unit_store.manifest.slides[0].slide_id)
        pred = ev.zero_shot_predict(bag, unit_prompts, topk=1)
        sims = bag.patches @ unit_prompts.W.T
        np.testing.assert_allclose(pred.logits, sims.max(axis=0), atol=1e-12)


class TestMocPredict:
    def test_deterministic(self, unit_store, unit_prompts):
        bag = unit_store.get(unit_store.manifest.slides[0].slide_id)
        m = meta.init_meta(16, 8, 4, seed=0)
        cfg = FAST.validate()
        a = ev.moc_predict(bag, unit_prompts, m, cfg)
        b = ev.moc_predict(bag, unit_prompts, m, cfg)
        np.testing.assert_array_equal(a.logits, b.logits)
        assert a.predicted_class == b.predicted_class

    def test_trained_fold_beats_chance(self, unit_store, unit_prompts, unit_manifest):
        split = sp.sample_few_shot_splits(unit_manifest, 2, 1, 2, 4, seed=0)[0]
        model, _ = tr.train(unit_store, unit_prompts, split, FAST)
        metrics, preds = ev.evaluate_fold(unit_store, unit_prompts, split, model, FAST.validate())
        assert metrics.n_test == 4
        assert len(preds) == 4
        assert metrics.auc >= 0.5

    def test_summation_route_needs_no_model(self, unit_store, unit_prompts, unit_manifest):
        split = sp.sample_few_shot_splits(unit_manifest, 2, 1, 2, 4, seed=0)[0]
        cfg = dataclasses.replace(FAST, fusion="sum").validate()
        metrics, _ = ev.evaluate_fold(unit_store, unit_prompts, split, None, cfg)
        assert 0.0 <= metrics.auc <= 1.0


class TestAblation:
    def test_rows_and_order(self, unit_store, unit_prompts, unit_manifest):
        splits = sp.sample_few_shot_splits(unit_manifest, 2, 2, 2, 4, seed=0)
        subsets = [("peak",), ("peak", "background")]
        rows = ev.run_ablation(unit_store, unit_prompts, splits, FAST, subsets)
        assert [r.method for r in rows] == [
            "meta[confidence_peak]",
            "sum[confidence_peak]",
            "meta[confidence_peak+background_suppression]",
            "sum[confidence_peak+background_suppression]",
        ]
        for r in rows:
            assert r.n_folds == 2
            assert 0.0 <= r.auc_mean <= 1.0

    def test_no_summation(self, unit_store, unit_prompts, unit_manifest):
        splits = sp.sample_few_shot_splits(unit_manifest, 1, 1, 2, 4, seed=0)
        rows = ev.run_ablation(unit_store, unit_prompts, splits, FAST, [("peak",)], include_summation=False)
        assert [r.fusion for r in rows] == ["meta"]

    def test_empty_subset_rejected(self, unit_store, unit_prompts, unit_manifest):
        splits = sp.sample_few_shot_splits(unit_manifest, 1, 1, 2, 4, seed=0)
        with pytest.raises(EmptySubset):
            ev.run_ablation(unit_store, unit_prompts, splits, FAST, [()])


class TestExport:
    def test_columns_and_rows(self, unit_store, unit_prompts, tmp_path):
        bag = unit_store.get(unit_store.manifest.slides[0].slide_id)
        m = meta.init_meta(16, 8, 4, seed=0)
        out = tmp_path / "scores.csv"
        ev.export_patch_scores(bag, unit_prompts, m, FAST, out)
        lines = out.read_text().splitlines()
        assert len(lines) == bag.n_patches + 1
        header = lines[0].split(",")
        assert header[:3] == ["patch", "x", "y"]
        assert sum(c.startswith("score_") for c in header) == 4
        assert sum(c.startswith("nominated_") for c in header) == 4
        assert sum(c.startswith("lambda_") for c in header) == 4
        assert sum(c.startswith("logit_") for c in header) == 2
        first = lines[1].split(",")
        assert first[0] == "0"
        flags_cols = [i for i, c in enumerate(header) if c.startswith("nominated_")]
        total = sum(int(ln.split(",")[i]) for ln in lines[1:] for i in flags_cols)
        assert total == 4 * FAST.q  # q < n_patches, all elections full

    def test_sum_route_drops_lambda(self, unit_store, unit_prompts, tmp_path):
        bag = unit_store.get(unit_store.manifest.slides[0].slide_id)
        cfg = dataclasses.replace(FAST, fusion="sum")
        ev.export_patch_scores(bag, unit_prompts, None, cfg, tmp_path / "s.csv")
        header = (tmp_path / "s.csv").read_text().splitlines()[0]
        assert "lambda_" not in header

    def test_re_export_byte_identical(self, unit_store, unit_prompts, tmp_path):
        bag = unit_store.get(unit_store.manifest.slides[1].slide_id)
        m = meta.init_meta(16, 8, 4, seed=1)
        ev.export_patch_scores(bag, unit_prompts, m, FAST, tmp_path / "a.csv")
        ev.export_patch_scores(bag, unit_prompts, m, FAST, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_missing_coords(self, unit_prompts, tmp_path):
        from moc.store import SlideBag
        from conftest import random_unit_rows

        bag = SlideBag("nc", random_unit_rows(np.random.default_rng(0), 5, 16), 0, None)
        with pytest.raises(MissingCoords):
            ev.export_patch_scores(bag, unit_prompts, None, dataclasses.replace(FAST, fusion="sum"), tmp_path / "x.csv")


class TestMetricsFile:
    def test_round_trip(self, tmp_path):
        rows = [
            ev.MetricsRow("moc", 2, 0, 0.9123456789012345, 0.75),
            ev.MetricsRow("zeroshot", 0, 1, 0.5, 1.0 / 3.0),
        ]
        p = tmp_path / "m.tsv"
        ev.write_metrics(rows, p, header={"dataset_id": "unit"})
        header, back = ev.read_metrics(p)
        assert header == {"dataset_id": "unit"}
        assert back == rows
        ev.write_metrics(back, tmp_path / "again.tsv", header=header)
        assert p.read_bytes() == (tmp_path / "again.tsv").read_bytes()

    def test_fold_rows(self):
        rows = ev.fold_rows("moc", 4, [ev.FoldMetrics(0, 0.8, 0.7, 4), ev.FoldMetrics(1, 0.9, 0.6, 4)])
        assert [r.fold for r in rows] == [0, 1]
        assert all(r.method == "moc" and r.shots == 4 for r in rows)

    def test_rejects_other_files(self, tmp_path):
        p = tmp_path / "x.tsv"
        p.write_text("{}\nnot\ta\tmetrics\tfile\n")
        with pytest.raises(FormatViolation):
            ev.read_metrics(p)
