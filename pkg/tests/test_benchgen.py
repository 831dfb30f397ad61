"""
Unit tests for the benchmark generator.
"""
import pytest
import numpy as np

import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

from app.core import benchgen
from app.core.benchgen import generate, power_law_quotas, rank_frequency_slope, write_bench
from app.core.errors import ConfigError
from app.core.graph import KnowledgeGraph
from app.models.schemas import BenchSpec


@pytest.fixture(scope="module")
def default_bench():
    return generate(BenchSpec())


def triple_set(arr):
    return set(map(tuple, np.asarray(arr).tolist()))


class TestPowerLawQuotas:
    def test_sum_order_and_cap(self):
        quotas = power_law_quotas(200, 1.2, 300, 299)
        assert quotas.sum() == 200
        assert np.all(np.diff(quotas) <= 0)
        assert quotas.min() >= 1 and quotas.max() <= 299

    def test_infeasible_total_rejected(self):
        with pytest.raises(ConfigError):
            power_law_quotas(100, 1.0, 5, 10)

    def test_slope_of_exact_power_law(self):
        counts = np.floor(5000 * np.arange(1, 400, dtype=float) ** -1.5).astype(int)
        assert rank_frequency_slope(counts) == pytest.approx(-1.5, abs=0.1)

    def test_slope_needs_two_distinct_sizes(self):
        assert np.isnan(rank_frequency_slope(np.array([3, 3, 3])))


class TestGenerate:
    def test_default_split_counts(self, default_bench):
        g = default_bench.graph
        assert (len(g.train), len(g.valid), len(g.test)) == (2400, 300, 300)
        assert g.n_entities == 300 and g.n_relations == 12

    def test_no_leakage(self, default_bench):
        g = default_bench.graph
        train = triple_set(g.train)
        assert not train & triple_set(g.test)
        assert not train & triple_set(g.valid)
        assert not triple_set(g.valid) & triple_set(g.test)
        assert default_bench.check.leaked == 0

    def test_held_out_uses_training_vocabulary(self, default_bench):
        g = default_bench.graph
        seen = set(g.train[:, [0, 2]].ravel().tolist())
        held = np.concatenate([g.valid, g.test])
        assert set(held[:, [0, 2]].ravel().tolist()) <= seen
        assert set(held[:, 1].tolist()) <= set(g.train[:, 1].tolist())

    def test_low_degree_bin_share(self, default_bench):
        assert default_bench.check.low_bin_share >= 0.25
        assert default_bench.check.low_bin_ok

    def test_composed_relations_recorded(self, default_bench):
        assert len(default_bench.compositions) == 3
        for r, (first, second) in default_bench.compositions.items():
            assert r >= 9 and first < 9 and second < 9 and first != second

    def test_pure_power_law_slope(self):
        result = generate(BenchSpec(compose_fraction=0.0, noise=0.0))
        assert result.check.slope_ok
        assert result.check.slope == pytest.approx(-1.2, abs=0.2)

    def test_default_spec_slope(self, default_bench):
        assert default_bench.check.slope_ok
        assert default_bench.check.slope == pytest.approx(-1.2, abs=0.2)
        assert default_bench.check.passed

    def test_composed_relations_share_the_power_law(self, default_bench):
        g = default_bench.graph
        expected = power_law_quotas(200, 1.2, 300, 299).tolist()
        for r in default_bench.compositions:
            tails = g.train[g.train[:, 1] == r][:, 2]
            assert sorted(np.bincount(tails).tolist(), reverse=True)[:len(expected)] == expected
            assert len(triple_set(g.train[g.train[:, 1] == r])) == 200

    def test_slope_outside_tolerance_is_rejected(self, monkeypatch):
        monkeypatch.setattr(benchgen, "rank_frequency_slope", lambda counts: -0.8)
        with pytest.raises(ConfigError, match="slope"):
            generate(BenchSpec(n_entities=80, n_relations=4, n_triples=600, seed=5))


    def test_same_seed_same_files(self, tmp_path):
        spec = BenchSpec(n_entities=80, n_relations=4, n_triples=600, seed=5)
        write_bench(spec, str(tmp_path / "a"))
        write_bench(spec, str(tmp_path / "b"))
        for name in ("train.txt", "valid.txt", "test.txt", "bench_spec.txt", "bench_check.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_written_splits_load_back(self, tmp_path):
        spec = BenchSpec(n_entities=80, n_relations=4, n_triples=600, seed=5)
        result = write_bench(spec, str(tmp_path))
        g = KnowledgeGraph.load(str(tmp_path))
        assert len(g.train) == len(result.graph.train)
        assert len(g.test) == len(result.graph.test)

    def test_different_seed_changes_graph(self):
        a = generate(BenchSpec(n_entities=80, n_relations=4, n_triples=600, seed=1)).graph
        b = generate(BenchSpec(n_entities=80, n_relations=4, n_triples=600, seed=2)).graph
        assert not np.array_equal(a.train, b.train)

    def test_infeasible_spec_rejected(self):
        with pytest.raises(ConfigError):
            generate(BenchSpec(n_entities=3, n_relations=1, n_triples=50))

    def test_fractions_must_sum_to_one(self):
        with pytest.raises(ValueError):
            BenchSpec(train_fraction=0.8, valid_fraction=0.2, test_fraction=0.1)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
