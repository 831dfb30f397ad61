"""
Unit tests for the evaluator module (filtered ranks, metrics, degree reports, paired t-test).
"""
import pytest
import numpy as np
from pydantic import ValidationError
from scipy import stats

import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

from app.core.evaluator import (
    FilterIndex,
    RankResult,
    binned_report,
    evaluate_queries,
    filtered_rank,
    hits_at_k,
    mean_rank,
    metric_summary,
    mrr,
    paired_t_test,
    query_features,
    rank_from_scores,
    report_rows,
    stratified_report,
)
from app.core.graph import DegreeIndex, KnowledgeGraph, Triple
from app.core.scoring import ModelParams, score_queries


def integer_model(seed, n_entities=6, n_relations=2, dim=2):
    """Small integer embeddings, so exact ties are common."""
    rng = np.random.default_rng(seed)
    return ModelParams("distmult", rng.integers(-1, 2, (n_entities, dim)).astype(float),
                       rng.integers(-1, 2, (n_relations, dim)).astype(float))


def oracle_rank(scores, target, filtered):
    """Deletes filtered rows, then counts competitors strictly above and level with the target."""
    keep = [v for v in range(len(scores)) if v == target or v not in set(filtered)]
    others = [scores[v] for v in keep if v != target]
    greater = sum(1 for s in others if s > scores[target])
    ties = sum(1 for s in others if s == scores[target])
    return 1 + greater + ties / 2


def results_with(ranks, degrees):
    return [RankResult(Triple(0, 0, i), float(r), int(d)) for i, (r, d) in enumerate(zip(ranks, degrees))]


class TestRankFromScores:
    def test_best_score_ranks_first(self):
        assert rank_from_scores(np.array([0.1, 0.9, 0.2, 0.3]), 1) == 1.0

    def test_tie_at_top_is_one_and_a_half(self):
        scores = np.array([0.5, 0.9, 0.9, 0.1])
        assert rank_from_scores(scores, 1) == 1.5
        assert rank_from_scores(scores, 1, tie_mode="optimistic") == 1.0
        assert rank_from_scores(scores, 1, tie_mode="pessimistic") == 2.0

    def test_filtered_competitors_removed(self):
        scores = np.array([0.9, 0.8, 0.1, 0.5, 0.2])
        assert rank_from_scores(scores, 3, filtered=np.array([0, 1])) == 1.0
        assert rank_from_scores(scores, 3) == 3.0

    def test_target_never_filtered(self):
        scores = np.array([0.2, 0.9, 0.1])
        assert rank_from_scores(scores, 1, filtered=np.array([1])) == 1.0

    def test_unknown_tie_mode_rejected(self):
        with pytest.raises(ValueError):
            rank_from_scores(np.array([1.0, 2.0]), 0, tie_mode="random")


class TestFilteredRank:
    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(0)
        for seed in range(50):
            model = integer_model(seed)
            triples = np.stack([rng.integers(0, 6, 12), rng.integers(0, 2, 12), rng.integers(0, 6, 12)], axis=1)
            known = FilterIndex(triples)
            for h, r, t in triples.tolist():
                scores = score_queries(model, np.array([h]), np.array([r]))[0]
                expected = oracle_rank(scores, t, known.known_tails(h, r).tolist())
                assert filtered_rank(model, (h, r, t), known).rank == expected

    def test_filtered_never_worse_than_unfiltered(self):
        model = integer_model(1, n_entities=8)
        triples = np.array([[0, 0, t] for t in range(8)] + [[1, 1, 2], [1, 1, 3]])
        known = FilterIndex(triples)
        for q in triples:
            assert filtered_rank(model, q, known).rank <= filtered_rank(model, q, None).rank

    def test_batched_evaluation_matches_single_queries(self):
        model = integer_model(2)
        triples = np.array([[0, 0, 1], [2, 1, 3], [4, 0, 5], [0, 0, 2]])
        g = KnowledgeGraph(tuple("abcdef"), ("r", "s"), triples, triples[:0], triples[:0])
        idx = DegreeIndex.build(g)
        known = FilterIndex(triples)
        batched = evaluate_queries(model, triples, known, idx, batch_size=3)
        for res, q in zip(batched, triples):
            single = filtered_rank(model, q, known, idx)
            assert res.rank == single.rank
            assert res.degree == single.degree
            assert 0.0 <= res.confidence <= 1.0

    def test_filter_index_membership(self):
        known = FilterIndex(np.array([[0, 1, 2], [0, 1, 3]]))
        assert (0, 1, 3) in known
        assert (0, 1, 4) not in known
        assert known.known_tails(5, 5).size == 0


class TestMetrics:
    def test_mrr_of_one_two_four(self):
        assert mrr([1, 2, 4]) == pytest.approx(0.583333, abs=1e-6)

    def test_all_first_ranks(self):
        assert mrr([1, 1, 1]) == hits_at_k([1, 1, 1], 1) == 1.0

    def test_hits_at_one_and_ten(self):
        assert hits_at_k([1, 11], 10) == 0.5
        assert hits_at_k([1, 11], 1) == 0.5
        assert mean_rank([1, 11]) == 6.0

    def test_summary_keys(self):
        summary = metric_summary([1, 3])
        assert set(summary) == {"count", "mrr", "mean_rank", "hits@1", "hits@3", "hits@10"}

    def test_empty_list_rejected(self):
        with pytest.raises(ValueError):
            mrr([])


class TestBinnedReport:
    def test_one_query_per_bin(self):
        rows = binned_report(results_with([2, 2, 2, 2], [0, 3, 20, 100]))
        assert [r.label for r in rows] == ["zero", "low", "medium", "high"]
        assert all(r.count == 1 and r.mrr == 0.5 for r in rows)

    def test_bin_counts_sum_to_total(self):
        rng = np.random.default_rng(3)
        results = results_with(rng.integers(1, 20, 200), rng.integers(0, 80, 200))
        assert sum(r.count for r in binned_report(results)) == 200

    def test_empty_bins_left_out(self):
        rows = binned_report(results_with([1, 4], [2, 5]))
        assert [r.label for r in rows] == ["low"]
        assert rows[0].mrr == pytest.approx(0.625)


class TestStratifiedReport:
    def setup_method(self):
        self.ranks = [1, 2, 4, 1, 5, 10, 2, 1, 3, 8]
        self.results = results_with(self.ranks, [0] * 10)
        self.features = {
            "tail_relation": np.array([0, 1, 2, 5, 5, 12, 30, 60, 1, 0]),
            "tail_in": np.array([1, 1, 4, 8, 20, 20, 40, 70, 3, 2]),
        }

    def test_hand_grouping(self):
        rows = stratified_report(self.results, self.features, "tail_relation", [0, 1, 10, 50, np.inf])
        by_label = {r.label: r for r in rows}
        assert by_label["[0, 1)"].count == 2
        assert by_label["[0, 1)"].mrr == pytest.approx((1 + 1 / 8) / 2)
        assert by_label["[1, 10)"].count == 5
        assert by_label["[1, 10)"].mrr == pytest.approx((1 / 2 + 1 / 4 + 1 + 1 / 5 + 1 / 3) / 5)
        assert by_label["[10, 50)"].count == 2
        assert by_label["[50, inf)"].count == 1

    def test_default_edges_reproduce_binned_report(self):
        results = [RankResult(r.query, r.rank, int(d)) for r, d in zip(self.results, self.features["tail_relation"])]
        binned = binned_report(results)
        stratified = stratified_report(results, self.features, "tail_relation", [0, 1, 10, 50, np.inf])
        assert [(b.count, b.metrics) for b in binned] == [(s.count, s.metrics) for s in stratified]

    def test_cross_tab_partitions_queries(self):
        rows = stratified_report(self.results, self.features, "tail_relation", [0, 3, 25, np.inf],
                                 secondary="tail_in", secondary_edges=[0, 5, 50, np.inf])
        assert sum(r.count for r in rows) == 10
        assert all(r.column is not None for r in rows)
        long_form = report_rows(rows, "tail_relation")
        assert {"feature", "bin", "secondary_bin", "metric", "count", "value"} <= set(long_form[0])

    def test_unknown_feature_rejected(self):
        with pytest.raises(ValueError):
            stratified_report(self.results, self.features, "popularity", [0, 1])

    def test_unsorted_edges_rejected(self):
        with pytest.raises(ValidationError):
            stratified_report(self.results, self.features, "tail_relation", [0, 10, 5])

    def test_query_features_use_original_in_out_degrees(self):
        triples = np.array([[0, 0, 1], [2, 0, 1], [1, 1, 2]])
        g = KnowledgeGraph(tuple("abc"), ("r", "s"), triples, triples[:0], triples[:0])
        idx = DegreeIndex.build(g)
        features = query_features(triples, idx)
        assert features["tail_relation"].tolist() == [2, 2, 1]
        assert features["other_tail_relation"].tolist() == [0, 0, 0]
        assert features["head_out"].tolist() == [1, 1, 1]
        assert features["tail_in"].tolist() == [2, 2, 1]


class TestPairedTTest:
    def test_hand_example(self):
        result = paired_t_test([1, -1, 0, 2], [0, 0, 0, 0])
        assert result.t_statistic == pytest.approx(0.7746, abs=1e-4)
        assert not result.significant

    def test_matches_scipy(self):
        rng = np.random.default_rng(4)
        a, b = rng.random(30), rng.random(30)
        result = paired_t_test(a, b)
        expected = stats.ttest_rel(a, b)
        assert result.t_statistic == pytest.approx(expected.statistic, rel=1e-10)
        assert result.p_value == pytest.approx(expected.pvalue, rel=1e-8)

    def test_identical_samples_are_no_difference(self):
        result = paired_t_test([0.5, 0.25, 1.0], [0.5, 0.25, 1.0])
        assert result.no_difference and not result.significant
        assert result.p_value == 1.0

    def test_zero_variance_shift_is_significant(self):
        result = paired_t_test([2, 3], [1, 2])
        assert result.t_statistic == np.inf
        assert result.significant

    def test_requires_aligned_pairs(self):
        with pytest.raises(ValueError):
            paired_t_test([1, 2, 3], [1, 2])
        with pytest.raises(ValueError):
            paired_t_test([1], [2])


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
