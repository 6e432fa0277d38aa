import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from moc import bank, store
from moc.errors import (
    DimensionMismatch,
    EmptySubset,
    NeedAtLeastTwoClasses,
    NoBackgroundPrompts,
)
from conftest import random_unit_rows


def tiny_bag(rng, n=6, d=8):
    return store.SlideBag("t", random_unit_rows(rng, n, d), 0, None)


def tiny_prompts(rng, C=3, Cb=2, d=8):
    names = [f"c{i}" for i in range(C)]
    bnames = [f"b{i}" for i in range(Cb)]
    Wb = random_unit_rows(rng, Cb, d) if Cb else None
    return store.PromptSet(names, random_unit_rows(rng, C, d), bnames, Wb)


class TestFormulas:
    """Each scorer against an index-by-index loop oracle."""

    def test_confidence_peak(self):
        rng = np.random.default_rng(0)
        bag, prompts = tiny_bag(rng), tiny_prompts(rng)
        got = bank.score_confidence_peak(bag, prompts)
        assert got.kind == bank.VECTOR_PER_CLASS
        for i in range(bag.n_patches):
            for c in range(prompts.n_classes):
                want = float(np.dot(bag.patches[i], prompts.W[c]))
                assert abs(got.scores[i, c] - want) < 1e-12

    def test_normalized_certainty(self):
        rng = np.random.default_rng(1)
        bag, prompts = tiny_bag(rng), tiny_prompts(rng)
        got = bank.score_normalized_certainty(bag, prompts)
        for i in range(bag.n_patches):
            e = [math.exp(float(np.dot(bag.patches[i], prompts.W[c]))) for c in range(prompts.n_classes)]
            want = np.array(e) / sum(e)
            np.testing.assert_allclose(got.scores[i], want, atol=1e-12)

    def test_certainty_temperature(self):
        rng = np.random.default_rng(2)
        bag, prompts = tiny_bag(rng), tiny_prompts(rng)
        hot = bank.score_normalized_certainty(bag, prompts, temperature=1e4)
        np.testing.assert_allclose(hot.scores, 1.0 / prompts.n_classes, atol=1e-3)
        cold = bank.score_normalized_certainty(bag, prompts, temperature=1e-3)
        assert np.all(cold.scores.max(axis=1) > 0.999)
        with pytest.raises(ValueError):
            bank.score_normalized_certainty(bag, prompts, temperature=0.0)

    def test_divergence_extremum(self):
        rng = np.random.default_rng(3)
        bag, prompts = tiny_bag(rng), tiny_prompts(rng)
        got = bank.score_divergence_extremum(bag, prompts)
        assert got.kind == bank.SCALAR_PER_PATCH
        for i in range(bag.n_patches):
            sims = sorted(float(np.dot(bag.patches[i], w)) for w in prompts.W)
            assert abs(got.scores[i] - (sims[-1] - sims[-2])) < 1e-12
        assert np.all(got.scores >= 0)

    def test_divergence_needs_two_classes(self):
        rng = np.random.default_rng(4)
        bag = tiny_bag(rng)
        prompts = tiny_prompts(rng)
        # bypass PromptSet validation to probe the scorer's own guard
        object.__setattr__(prompts, "W", prompts.W[:1])
        object.__setattr__(prompts, "class_names", prompts.class_names[:1])
        with pytest.raises(NeedAtLeastTwoClasses):
            bank.score_divergence_extremum(bag, prompts)

    def test_background_suppression(self):
        rng = np.random.default_rng(5)
        bag, prompts = tiny_bag(rng), tiny_prompts(rng)
        got = bank.score_background_suppression(bag, prompts)
        assert got.kind == bank.SCALAR_PER_PATCH
        for i in range(bag.n_patches):
            want = -sum(float(np.dot(bag.patches[i], w)) for w in prompts.W_beta)
            assert abs(got.scores[i] - want) < 1e-12

    def test_background_requires_prompts(self):
        rng = np.random.default_rng(6)
        bag = tiny_bag(rng)
        prompts = tiny_prompts(rng, Cb=0)
        with pytest.raises(NoBackgroundPrompts):
            bank.score_background_suppression(bag, prompts)

    def test_dim_mismatch(self):
        rng = np.random.default_rng(7)
        bag = tiny_bag(rng, d=8)
        prompts = tiny_prompts(rng, d=6)
        with pytest.raises(DimensionMismatch):
            bank.score_confidence_peak(bag, prompts)


class TestScoreTable:
    def test_expand_matrix_is_identity(self):
        t = bank.ScoreTable("x", bank.VECTOR_PER_CLASS, np.arange(6.0).reshape(3, 2))
        assert t.expand(2) is t.scores

    def test_expand_broadcasts_scalar(self):
        t = bank.ScoreTable("x", bank.SCALAR_PER_PATCH, np.array([1.0, 2.0]))
        out = t.expand(3)
        assert out.shape == (2, 3)
        np.testing.assert_array_equal(out, [[1, 1, 1], [2, 2, 2]])

    def test_ranking_score(self):
        m = bank.ScoreTable("x", bank.VECTOR_PER_CLASS, np.array([[0.1, 0.9], [0.4, 0.2]]))
        np.testing.assert_allclose(bank.ranking_score(m), [0.9, 0.4])
        s = bank.ScoreTable("x", bank.SCALAR_PER_PATCH, np.array([3.0, -1.0]))
        np.testing.assert_allclose(bank.ranking_score(s), [3.0, -1.0])


class TestBankAssembly:
    def test_full_bank_order(self, unit_store, unit_prompts):
        bag = unit_store.get(unit_store.manifest.slides[0].slide_id)
        tables = bank.score_bank(bag, unit_prompts)
        assert [t.classifier_id for t in tables] == list(bank.CLASSIFIER_IDS)
        kinds = {t.classifier_id: t.kind for t in tables}
        assert kinds[bank.CONFIDENCE_PEAK] == bank.VECTOR_PER_CLASS
        assert kinds[bank.DIVERGENCE_EXTREMUM] == bank.SCALAR_PER_PATCH

    def test_subset_and_aliases(self, unit_store, unit_prompts):
        bag = unit_store.get(unit_store.manifest.slides[0].slide_id)
        tables = bank.score_bank(bag, unit_prompts, bank=("background", "peak"))
        # canonical order, regardless of how the subset was spelled
        assert [t.classifier_id for t in tables] == [bank.CONFIDENCE_PEAK, bank.BACKGROUND_SUPPRESSION]

    def test_standardize(self, unit_store, unit_prompts):
        bag = unit_store.get(unit_store.manifest.slides[0].slide_id)
        for t in bank.score_bank(bag, unit_prompts, standardize=True):
            assert abs(float(t.scores.mean())) < 1e-10
            assert abs(float(t.scores.std()) - 1.0) < 1e-6

    def test_standardize_constant_table(self):
        t = bank.ScoreTable("x", bank.SCALAR_PER_PATCH, np.full(4, 2.5))
        out = bank.standardize_table(t)
        np.testing.assert_allclose(out.scores, 0.0, atol=1e-12)


class TestCanonicalBank:
    def test_aliases_resolve(self):
        assert bank.parse_bank_arg("peak,background") == (
            bank.CONFIDENCE_PEAK,
            bank.BACKGROUND_SUPPRESSION,
        )

    def test_order_normalized(self):
        out = bank.canonical_bank([bank.BACKGROUND_SUPPRESSION, bank.CONFIDENCE_PEAK])
        assert out == (bank.CONFIDENCE_PEAK, bank.BACKGROUND_SUPPRESSION)

    def test_duplicates_collapse(self):
        assert bank.canonical_bank(["peak", bank.CONFIDENCE_PEAK]) == (bank.CONFIDENCE_PEAK,)

    def test_unknown_id(self):
        with pytest.raises(EmptySubset):
            bank.canonical_bank(["nope"])

    def test_empty(self):
        with pytest.raises(EmptySubset):
            bank.canonical_bank([])
        with pytest.raises(EmptySubset):
            bank.parse_bank_arg(" , ")

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.sampled_from(list(bank.CLASSIFIER_IDS) + list(bank._SHORT_ALIASES)), min_size=1, max_size=6))
    def test_idempotent(self, ids):
        once = bank.canonical_bank(ids)
        assert bank.canonical_bank(once) == once
        assert list(once) == [c for c in bank.CLASSIFIER_IDS if c in once]
