import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from moc import bank, nomination
from moc.errors import IndexOutOfRange


def oracle_top_q(ranking, q):
    """Reference election: stable sort by (-score, index), take q, ascending."""
    order = sorted(range(len(ranking)), key=lambda i: (-ranking[i], i))
    return sorted(order[: min(q, len(ranking))])


class TestElectBag:
    def test_basic(self):
        r = np.array([0.1, 0.9, 0.5, 0.7])
        np.testing.assert_array_equal(nomination.elect_bag(r, 2), [1, 3])

    def test_q_covers_all(self):
        r = np.array([0.3, 0.1])
        np.testing.assert_array_equal(nomination.elect_bag(r, 10), [0, 1])

    def test_ties_take_lowest_index(self):
        r = np.array([0.5, 0.5, 0.5, 0.5])
        np.testing.assert_array_equal(nomination.elect_bag(r, 2), [0, 1])

    def test_q_must_be_positive(self):
        with pytest.raises(ValueError):
            nomination.elect_bag(np.array([1.0]), 0)

    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(st.integers(-5, 5), min_size=1, max_size=30),
        st.integers(1, 35),
    )
    def test_matches_oracle(self, vals, q):
        # integer scores force plenty of ties; oracle breaks them by index
        r = np.array(vals, dtype=np.float64)
        np.testing.assert_array_equal(nomination.elect_bag(r, q), oracle_top_q(vals, q))


class TestUnionBags:
    def test_union_sorted_unique(self):
        out = nomination.union_bags("s", {"a": np.array([4, 1]), "b": np.array([1, 2])}, 10)
        np.testing.assert_array_equal(out.indices, [1, 2, 4])
        assert out.size == 3
        assert set(out.per_classifier) == {"a", "b"}

    def test_index_out_of_range(self):
        with pytest.raises(IndexOutOfRange):
            nomination.union_bags("s", {"a": np.array([0, 5])}, 5)
        with pytest.raises(IndexOutOfRange):
            nomination.union_bags("s", {"a": np.array([-1])}, 5)

    def test_empty_mapping(self):
        with pytest.raises(ValueError):
            nomination.union_bags("s", {}, 5)


class TestNominate:
    def test_small_q_union(self, unit_store, unit_prompts):
        sid = unit_store.manifest.slides[0].slide_id
        bag_ = unit_store.get(sid)
        out = nomination.nominate(bag_, unit_prompts, q=3)
        assert out.slide_id == sid
        assert set(out.per_classifier) == set(bank.CLASSIFIER_IDS)
        for idx in out.per_classifier.values():
            assert len(idx) == 3
            assert np.all(np.diff(idx) > 0)
        want = np.unique(np.concatenate(list(out.per_classifier.values())))
        np.testing.assert_array_equal(out.indices, want)
        assert 3 <= out.size <= 12

    def test_q_beyond_slide_keeps_everything(self, unit_store, unit_prompts):
        bag_ = unit_store.get(unit_store.manifest.slides[0].slide_id)
        out = nomination.nominate(bag_, unit_prompts, q=10_000)
        np.testing.assert_array_equal(out.indices, np.arange(bag_.n_patches))

    def test_matches_per_classifier_oracle(self, unit_store, unit_prompts):
        bag_ = unit_store.get(unit_store.manifest.slides[1].slide_id)
        q = 5
        out = nomination.nominate(bag_, unit_prompts, q=q)
        tables = bank.score_bank(bag_, unit_prompts)
        for t in tables:
            want = oracle_top_q(list(bank.ranking_score(t)), q)
            np.testing.assert_array_equal(out.per_classifier[t.classifier_id], want)

    def test_subset_bank(self, unit_store, unit_prompts):
        bag_ = unit_store.get(unit_store.manifest.slides[2].slide_id)
        out = nomination.nominate(bag_, unit_prompts, q=4, bank=("peak",))
        assert list(out.per_classifier) == [bank.CONFIDENCE_PEAK]
        np.testing.assert_array_equal(out.indices, out.per_classifier[bank.CONFIDENCE_PEAK])

    def test_reuses_given_tables(self, unit_store, unit_prompts):
        bag_ = unit_store.get(unit_store.manifest.slides[0].slide_id)
        tables = bank.score_bank(bag_, unit_prompts)
        a = nomination.nominate(bag_, unit_prompts, q=6, tables=tables)
        b = nomination.nominate(bag_, unit_prompts, q=6)
        np.testing.assert_array_equal(a.indices, b.indices)
