"""Scorer behavior on frozen examples, properties, and the report layer."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from typecoref.metrics import (
    ScoredDocument,
    b_cubed,
    bootstrap_significance,
    ceaf_e,
    ceaf_e_counts,
    document_avg_f1,
    impure_clusters,
    muc,
    muc_counts,
    phi4,
    score_by_group,
    score_documents,
    type_frequency_ratios,
)

KEY = [{"a", "b", "c"}, {"d"}]
RESPONSE = [{"a", "b"}, {"c", "d"}]


class TestFrozenExample:
    def test_muc(self):
        p, r, f1 = muc(KEY, RESPONSE)
        assert abs(p - 0.5) < 1e-12
        assert abs(r - 0.5) < 1e-12
        assert abs(f1 - 0.5) < 1e-12

    def test_b_cubed(self):
        p, r, f1 = b_cubed(KEY, RESPONSE)
        assert abs(p - 3 / 4) < 1e-12
        assert abs(r - 2 / 3) < 1e-12
        assert abs(f1 - 12 / 17) < 1e-12

    def test_ceaf_e(self):
        p, r, f1 = ceaf_e(KEY, RESPONSE)
        assert abs(p - 11 / 15) < 1e-12
        assert abs(r - 11 / 15) < 1e-12
        assert abs(f1 - 11 / 15) < 1e-12


class TestDegenerateCases:
    def test_identical_partitions_score_one(self):
        clusters = [{"a", "b"}, {"c", "d", "e"}, {"f"}]
        for metric in (muc, b_cubed, ceaf_e):
            assert metric(clusters, clusters).f1 == pytest.approx(1.0)

    def test_all_singletons_muc_is_zero_and_flagged(self):
        singles = [{"a"}, {"b"}]
        counts = muc_counts(singles, singles)
        assert counts.degenerate
        assert muc(singles, singles) == (0.0, 0.0, 0.0)

    def test_all_singletons_other_metrics_score_one(self):
        singles = [{"a"}, {"b"}]
        assert b_cubed(singles, singles).f1 == pytest.approx(1.0)
        assert ceaf_e(singles, singles).f1 == pytest.approx(1.0)

    def test_response_all_singletons_b_cubed(self):
        key = [{"a", "b", "c"}, {"d"}]
        response = [{"a"}, {"b"}, {"c"}, {"d"}]
        p, r, _ = b_cubed(key, response)
        assert p == pytest.approx(1.0)
        assert r == pytest.approx((1 / 3 + 1 / 3 + 1 / 3 + 1) / 4)

    def test_twinless_response_mention_becomes_key_singleton(self):
        key = [{"a", "b"}]
        response = [{"a", "b", "z"}]
        p, r, _ = b_cubed(key, response)
        assert r == pytest.approx(1.0)
        assert p < 1.0

    def test_not_a_partition_rejected(self):
        with pytest.raises(ValueError, match="two clusters"):
            muc([{"a", "b"}, {"a"}], [{"a"}])


def random_partition(rng, mentions, max_clusters=4):
    labels = rng.integers(0, max_clusters, size=len(mentions))
    clusters = {}
    for m, label in zip(mentions, labels):
        clusters.setdefault(int(label), set()).add(m)
    return list(clusters.values())


@given(st.integers(0, 10_000))
@settings(max_examples=60, deadline=None)
def test_symmetry_precision_is_flipped_recall(case_seed):
    rng = np.random.default_rng(case_seed)
    mentions = [f"m{i}" for i in range(int(rng.integers(1, 12)))]
    key = random_partition(rng, mentions)
    response = random_partition(rng, mentions)
    for counts_fn in (muc_counts, ceaf_e_counts):
        forward = counts_fn(key, response).prf()
        flipped = counts_fn(response, key).prf()
        assert forward.precision == pytest.approx(flipped.recall)
        assert forward.recall == pytest.approx(flipped.precision)


@given(st.integers(0, 10_000))
@settings(max_examples=60, deadline=None)
def test_score_one_only_for_equal_partitions(case_seed):
    rng = np.random.default_rng(case_seed)
    mentions = [f"m{i}" for i in range(int(rng.integers(2, 12)))]
    key = random_partition(rng, mentions)
    response = random_partition(rng, mentions)
    same = {frozenset(c) for c in key} == {frozenset(c) for c in response}
    for metric in (b_cubed, ceaf_e):
        assert (metric(key, response).f1 == pytest.approx(1.0)) == same
    key_multi = {frozenset(c) for c in key if len(c) > 1}
    response_multi = {frozenset(c) for c in response if len(c) > 1}
    if key_multi or response_multi:
        assert (muc(key, response).f1 == pytest.approx(1.0)) == (key_multi == response_multi)


def brute_force_ceafe_total(key_sets, response_sets):
    """Best alignment by enumerating permutations (at most 6 clusters a side)."""
    key_sets = [frozenset(c) for c in key_sets]
    response_sets = [frozenset(c) for c in response_sets]
    if len(key_sets) <= len(response_sets):
        small, large = key_sets, response_sets
    else:
        small, large = response_sets, key_sets
    best = 0.0
    for perm in itertools.permutations(range(len(large)), len(small)):
        best = max(best, sum(phi4(small[i], large[j]) for i, j in enumerate(perm)))
    return best


@given(st.integers(0, 10_000))
@settings(max_examples=60, deadline=None)
def test_ceafe_assignment_matches_brute_force(case_seed):
    rng = np.random.default_rng(case_seed)
    mentions = [f"m{i}" for i in range(int(rng.integers(2, 13)))]
    key = random_partition(rng, mentions, max_clusters=6)
    response = random_partition(rng, mentions, max_clusters=6)
    counts = ceaf_e_counts(key, response)
    assert counts.p_num == pytest.approx(brute_force_ceafe_total(key, response), abs=1e-12)


class TestImpureClusters:
    def test_pure_clusters(self):
        types = {"a": "PER", "b": "PER", "c": "LOC"}
        assert impure_clusters([{"a", "b"}, {"c"}], types) == 0

    def test_mixed_cluster(self):
        assert impure_clusters([{"a", "b"}], {"a": "PER", "b": "LOC"}) == 1

    def test_untyped_counts_as_na(self):
        assert impure_clusters([{"a", "b"}], {"a": "PER", "b": None}) == 1
        assert impure_clusters([{"a", "b"}], {"a": None, "b": None}) == 0

    @given(st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_matches_distinct_count_oracle(self, case_seed):
        rng = np.random.default_rng(case_seed)
        mentions = [f"m{i}" for i in range(int(rng.integers(1, 15)))]
        clusters = random_partition(rng, mentions)
        labels = ["PER", "LOC", "ORG", None]
        types = {m: labels[int(rng.integers(0, len(labels)))] for m in mentions}
        expected = sum(
            1 for c in clusters if len({types[m] or "NA" for m in c}) > 1
        )
        assert impure_clusters(clusters, types) == expected


class TestReports:
    def make_items(self):
        return [
            ScoredDocument("nw/doc1", KEY, RESPONSE, {"a": "PER", "b": "PER", "c": "LOC", "d": "LOC"}),
            ScoredDocument("bc/doc2", [{"x", "y"}], [{"x", "y"}], {"x": "ORG", "y": "ORG"}),
        ]

    def test_avg_f1_is_exact_mean(self):
        report = score_documents(self.make_items())
        assert report.avg_f1 == (report.muc.f1 + report.b_cubed.f1 + report.ceaf_e.f1) / 3.0

    def test_counts_aggregate_across_documents(self):
        report = score_documents(self.make_items())
        merged = muc_counts(KEY, RESPONSE) + muc_counts([{"x", "y"}], [{"x", "y"}])
        assert report.muc == merged.prf()

    def test_impure_count_totalled(self):
        report = score_documents(self.make_items())
        # response cluster {c, d} is typed LOC/LOC (pure); {a, b} PER/PER (pure)
        assert report.impure_cluster_count == 0
        items = self.make_items()
        items[0].types = {"a": "PER", "b": "PER", "c": "PER", "d": "LOC"}
        assert score_documents(items).impure_cluster_count == 1

    def test_score_by_group_splits_genres(self):
        groups = score_by_group(self.make_items())
        assert set(groups) == {"nw", "bc"}
        assert groups["bc"].document_count == 1
        assert groups["bc"].muc.f1 == pytest.approx(1.0)

    def test_single_genre_single_group(self):
        items = [ScoredDocument("tc/a", KEY, RESPONSE), ScoredDocument("tc/b", KEY, RESPONSE)]
        assert set(score_by_group(items)) == {"tc"}

    def test_unknown_prefix_goes_to_other(self):
        items = [ScoredDocument("weird_id", KEY, RESPONSE)]
        assert set(score_by_group(items)) == {"other"}

    def test_type_ratios_exclude_other_and_sum_below_one(self):
        items = [
            ScoredDocument(
                "nw/doc",
                KEY,
                RESPONSE,
                {"a": "PER", "b": "OTHER", "c": "PER", "d": "LOC"},
            )
        ]
        ratios = type_frequency_ratios(items)
        assert "OTHER" not in ratios
        assert ratios["PER"] == pytest.approx(0.5)
        assert sum(ratios.values()) <= 1.0

    def test_format_table_percentages(self):
        report = score_documents([ScoredDocument("d", KEY, KEY)])
        table = report.format_table("key==response")
        assert "100.00" in table

    def test_document_avg_f1(self):
        item = ScoredDocument("d", KEY, KEY)
        assert document_avg_f1(item) == pytest.approx(1.0)


class TestBootstrap:
    def test_identical_scores_give_half(self):
        p = bootstrap_significance([0.5] * 10, [0.5] * 10, resamples=2000, seed=1)
        assert p == pytest.approx(0.5)

    def test_uniform_improvement_gives_zero(self):
        base = list(np.linspace(0.2, 0.8, 12))
        better = [s + 1.0 for s in base]
        assert bootstrap_significance(better, base, resamples=2000, seed=2) == 0.0

    def test_reproducible_with_seed(self):
        rng = np.random.default_rng(0)
        a = rng.normal(0.55, 0.1, 20)
        b = rng.normal(0.5, 0.1, 20)
        p1 = bootstrap_significance(a, b, resamples=3000, seed=9)
        p2 = bootstrap_significance(a, b, resamples=3000, seed=9)
        assert p1 == p2

    def test_too_few_documents(self):
        with pytest.raises(ValueError, match="at least 2"):
            bootstrap_significance([1.0], [0.5])
