"""
Unit tests for the trainer module (negatives, mixing, baselines, training loop).
"""
import pytest
import numpy as np

import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

from app.core import trainer as trainer_module
from app.core.errors import DataError, DivergenceError
from app.core.graph import DegreeIndex, KnowledgeGraph, add_inverses
from app.core.numerics import RngStream
from app.core.scoring import ModelParams
from app.core.trainer import (
    SWAAverager,
    draw_partners,
    mix,
    oversample_order,
    reweight_weights,
    sample_negative_tails,
    sample_negatives,
    synth_batch,
    train,
)
from app.models.schemas import TrainConfig


def make_graph(triples, n_entities, n_relations):
    triples = np.asarray(triples, dtype=np.int64)
    return KnowledgeGraph(tuple(f"e{i}" for i in range(n_entities)), tuple(f"r{i}" for i in range(n_relations)),
                          triples, triples[:0], triples[:0])


def dense_graph(n_entities=6):
    """Every ordered pair (h, t), h != t, with relation (h + t) % 2; inverse-augmented."""
    triples = [(h, (h + t) % 2, t) for h in range(n_entities) for t in range(n_entities) if h != t]
    aug = add_inverses(make_graph(triples, n_entities, 2))
    return aug, DegreeIndex.build(aug)


def random_relation_graph(rng, n_entities=6, n_relations=3):
    """Every ordered pair (h, t), h != t, with a random relation; inverse-augmented."""
    triples = [(h, int(rng.integers(n_relations)), t)
               for h in range(n_entities) for t in range(n_entities) if h != t]
    aug = add_inverses(make_graph(triples, n_entities, n_relations))
    return aug, DegreeIndex.build(aug)


def chain_graph(n_entities=40, n_relations=3):
    triples = [(h, r, (h + r + 1) % n_entities) for r in range(n_relations) for h in range(n_entities)]
    aug = add_inverses(make_graph(triples, n_entities, n_relations))
    return aug, DegreeIndex.build(aug)


def small_config(**overrides):
    values = dict(model_kind="distmult", entity_dim=4, relation_dim=4, epochs=2, batch_size=16,
                  negatives=3, lr=0.01, degree_threshold=100.0, synth_per_triple=2, pretrain_epochs=0)
    values.update(overrides)
    return TrainConfig(**values)


class TestNegativeSampling:
    def test_never_returns_the_true_tail(self):
        out = sample_negatives(RngStream(0, "negatives"), (1, 0, 4), 3, 10)
        assert out.shape == (3, 3)
        assert np.all(out[:, 0] == 1) and np.all(out[:, 1] == 0)
        assert not np.any(out[:, 2] == 4)

    def test_uniform_over_remaining_entities(self):
        tails = sample_negative_tails(RngStream(1, "negatives"), np.zeros(20_000, dtype=int), 1, 5)
        counts = np.bincount(tails.ravel(), minlength=5)
        assert counts[0] == 0
        assert np.allclose(counts[1:] / counts.sum(), 0.25, atol=0.02)

    def test_same_seed_same_corruptions(self):
        a = sample_negatives(RngStream(5, "negatives"), (0, 0, 1), 8, 50)
        b = sample_negatives(RngStream(5, "negatives"), (0, 0, 1), 8, 50)
        assert np.array_equal(a, b)

    def test_needs_two_entities(self):
        with pytest.raises(ValueError):
            sample_negatives(RngStream(0, "negatives"), (0, 0, 0), 1, 1)


class TestMix:
    def setup_method(self):
        self.params = ModelParams("distmult", np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 2.0]]),
                                  np.array([[1.0, 1.0], [3.0, -1.0]]))

    def test_lambda_one_is_identity(self):
        mixed = mix((0, 0, 2), (1, 1, 2), 1.0, self.params)
        assert np.array_equal(mixed.mixed_head, self.params.entity[0])
        assert np.array_equal(mixed.mixed_rel, self.params.relation[0])
        assert mixed.tail == 2

    def test_midpoint(self):
        mixed = mix((0, 0, 2), (1, 1, 2), 0.5, self.params)
        assert mixed.mixed_head.tolist() == [0.5, 0.5]
        assert mixed.mixed_rel.tolist() == [2.0, 0.0]

    def test_different_tails_rejected(self):
        with pytest.raises(ValueError):
            mix((0, 0, 2), (1, 1, 0), 0.5, self.params)

    def test_random_mixes_are_convex_and_keep_the_tail(self):
        rng = np.random.default_rng(7)
        params = ModelParams("distmult", rng.normal(size=(20, 5)), rng.normal(size=(6, 5)))
        for _ in range(1000):
            h1, h2, t = rng.integers(0, 20, size=3)
            r1, r2 = rng.integers(0, 6, size=2)
            lam = rng.uniform()
            mixed = mix((h1, r1, t), (h2, r2, t), lam, params)
            assert mixed.tail == t
            for got, a, b in ((mixed.mixed_head, params.entity[h1], params.entity[h2]),
                              (mixed.mixed_rel, params.relation[r1], params.relation[r2])):
                assert np.all(got >= np.minimum(a, b) - 1e-12)
                assert np.all(got <= np.maximum(a, b) + 1e-12)
            same = mix((h1, r1, t), (h2, r2, t), 1.0, params)
            assert np.array_equal(same.mixed_head, params.entity[h1])
            assert np.array_equal(same.mixed_rel, params.relation[r1])

    def test_europe_belgium_germany(self):
        # entities: Europe, Belgium, Germany, Sweden; relations: HasCountry, Borders
        europe, belgium, germany, sweden = 0, 1, 2, 3
        has_country, borders = 0, 1
        g = make_graph([(europe, has_country, germany), (europe, has_country, sweden),
                        (belgium, borders, germany)], 4, 2)
        idx = DegreeIndex.build(g)
        e1 = (europe, has_country, germany)
        partners = idx.candidates(e1, "strict")
        assert partners.tolist() == [[belgium, borders, germany]]

        params = ModelParams.initialize("distmult", 4, 2, 3, 3, RngStream(0, "init"))
        mixed = mix(e1, partners[0], 0.3, params)
        assert np.allclose(mixed.mixed_head, 0.3 * params.entity[europe] + 0.7 * params.entity[belgium])
        assert np.allclose(mixed.mixed_rel, 0.3 * params.relation[has_country] + 0.7 * params.relation[borders])
        assert mixed.tail == germany
        assert mixed.source_e2 == (belgium, borders, germany)


class TestSynthBatch:
    def setup_method(self):
        # d_tail(0, r0) = 2; only (3, 1, 0) differs in both head and relation
        g = make_graph([(1, 0, 0), (2, 0, 0), (3, 1, 0), (0, 1, 3)], 4, 2)
        self.idx = DegreeIndex.build(g)
        self.params = ModelParams.initialize("distmult", 4, 2, 3, 3, RngStream(0, "init"))

    def test_zero_threshold_gives_nothing(self):
        cfg = small_config(degree_threshold=0.0, synth_per_triple=5, candidate_mode="strict")
        assert synth_batch((1, 0, 0), self.idx, cfg, RngStream(0, "mixup"), self.params) == []

    def test_single_candidate_reused_with_fresh_lambdas(self):
        cfg = small_config(degree_threshold=5.0, synth_per_triple=5, candidate_mode="strict")
        out = synth_batch((1, 0, 0), self.idx, cfg, RngStream(0, "mixup"), self.params)
        assert len(out) == 5
        assert all(tuple(m.source_e2) == (3, 1, 0) for m in out)
        assert len({m.lam for m in out}) == 5
        assert all(m.tail == 0 for m in out)

    def test_no_replacement_when_enough_candidates(self):
        picks = draw_partners((1, 0, 0), self.idx, 2, RngStream(1, "mixup"), "lenient")
        assert len({tuple(p) for p in picks.tolist()}) == 2

    def test_tail_without_partners_gives_empty(self):
        cfg = small_config(degree_threshold=5.0, synth_per_triple=5)
        assert synth_batch((0, 1, 3), self.idx, cfg, RngStream(0, "mixup"), self.params) == []

    def test_synthetic_rows_are_positives_on_the_shared_tail(self):
        cfg = small_config(degree_threshold=5.0, synth_per_triple=3)
        positives = np.array([(1, 0, 0), (2, 0, 0)])
        batch, count, skipped = trainer_module._synthetic_rows(positives, np.array([True, True]), self.idx, cfg,
                                                               RngStream(0, "mixup"))
        assert (count, skipped) == (6, 0)
        assert batch.targets.shape == (6, 1) and np.all(batch.targets == 1.0)
        assert np.all(batch.tails[:, 0] == 0)
        assert np.allclose(batch.head_w.sum(axis=1), 1.0)



class TestBaselines:
    def test_oversample_repeats_low_degree_rows(self):
        order = oversample_order(np.array([0, 3, 7]), 5.0)
        assert np.bincount(order).tolist() == [6, 3, 1]

    def test_reweight_caps_and_leaves_frequent_rows(self):
        w = reweight_weights(np.array([0, 1, 4, 10]), 5.0, 3.0)
        assert w.tolist() == [3.0, 3.0, 1.25, 1.0]


class TestSWAAverager:
    def test_running_mean_matches_arithmetic_mean(self):
        rng = np.random.default_rng(0)
        snapshots = [ModelParams("distmult", rng.normal(size=(3, 2)), rng.normal(size=(2, 2))) for _ in range(4)]
        swa = SWAAverager()
        for p in snapshots:
            swa.update(p)
        assert swa.n_averaged == 4
        expected = np.mean([p.entity for p in snapshots], axis=0)
        assert np.allclose(swa.params.entity, expected, atol=1e-12)


class TestTrain:
    def test_requires_inverse_augmented_graph(self):
        g = make_graph([(0, 0, 1)], 2, 1)
        with pytest.raises(DataError):
            train(g, DegreeIndex.build(g), small_config())

    @pytest.mark.parametrize("overrides", [
        {},
        {"dropout_input": 0.2, "dropout_hidden2": 0.2},
        {"model_kind": "tucker", "entity_dim": 3, "relation_dim": 2,
         "dropout_input": 0.2, "dropout_hidden1": 0.2, "dropout_hidden2": 0.2},
    ])
    def test_zero_synth_weight_matches_standard_bit_for_bit(self, overrides):
        g, idx = dense_graph()
        standard = train(g, idx, small_config(method="standard", **overrides))
        mixed = train(g, idx, small_config(method="kg_mixup", synth_loss_weight=0.0, **overrides))
        for a, b in zip(standard.report.epochs, mixed.report.epochs):
            assert a.batch_losses == b.batch_losses
        assert np.array_equal(standard.params.entity, mixed.params.entity)
        assert np.array_equal(standard.params.relation, mixed.params.relation)
        assert mixed.report.epochs[0].synth_count > 0

    def test_synthetic_count_per_epoch(self):
        g, idx = dense_graph()
        result = train(g, idx, small_config(method="kg_mixup", synth_per_triple=5))
        assert result.report.e_thresh == len(g.train)
        for record in result.report.epochs:
            assert record.synth_skipped == 0
            assert record.synth_count == 5 * len(g.train) == result.report.expected_synth_per_epoch

    @pytest.mark.parametrize("seed", range(10))
    def test_synthetic_count_matches_low_degree_triples(self, seed):
        rng = np.random.default_rng(seed)
        g, idx = random_relation_graph(rng)
        triples = g.train.tolist()
        degrees = [sum(1 for _, r2, t2 in triples if (t2, r2) == (t, r)) for _, r, t in triples]
        threshold = float(rng.integers(min(degrees) + 1, max(degrees) + 1))
        k = int(rng.integers(1, 6))
        e_thresh = sum(1 for d in degrees if d < threshold)
        assert 0 < e_thresh < len(triples)

        cfg = small_config(method="kg_mixup", degree_threshold=threshold, synth_per_triple=k, seed=seed)
        report = train(g, idx, cfg).report
        assert report.e_thresh == e_thresh
        for record in report.epochs:
            assert record.synth_skipped == 0
            assert record.synth_count == k * e_thresh

    def test_pretraining_phase_has_no_synthetic_rows(self):
        g, idx = dense_graph()
        cfg = small_config(model_kind="tucker", entity_dim=3, relation_dim=2, method="kg_mixup",
                           epochs=3, pretrain_epochs=1)
        report = train(g, idx, cfg).report
        assert [r.phase for r in report.epochs] == ["pretrain", "mixup", "mixup"]
        assert report.epochs[0].synth_count == 0
        assert report.epochs[1].synth_count > 0

    def test_oversample_epoch_length(self):
        g, idx = dense_graph()
        degrees = idx.tail_relation_degrees(g.train)
        threshold = 3.0
        expected = len(g.train) + int(np.ceil(threshold - degrees[degrees < threshold]).sum())
        report = train(g, idx, small_config(method="oversample", degree_threshold=threshold, epochs=1)).report
        assert report.epochs[0].positives == expected
        assert report.epochs[0].negatives_scored == expected * 3

    def test_same_seed_is_deterministic(self):
        g, idx = dense_graph()
        cfg = small_config(model_kind="tucker", entity_dim=3, relation_dim=2, method="kg_mixup",
                           dropout_input=0.2, dropout_hidden1=0.2, dropout_hidden2=0.2)
        a, b = train(g, idx, cfg), train(g, idx, cfg)
        assert np.array_equal(a.params.entity, b.params.entity)
        assert np.array_equal(a.params.core, b.params.core)
        c = train(g, idx, cfg.model_copy(update={"seed": 1}))
        assert not np.array_equal(a.params.entity, c.params.entity)

    def test_swa_is_mean_of_late_epochs(self):
        g, idx = dense_graph()
        cfg = small_config(epochs=4, swa_enabled=True, swa_start_fraction=0.5, swa_lr=0.005)
        snapshots = []

        def keep(epoch, params, record):
            if record.swa_averaged:
                snapshots.append(params.copy())

        result = train(g, idx, cfg, epoch_callback=keep)
        assert len(snapshots) == result.report.swa_epochs == 3
        assert [r.lr for r in result.report.epochs] == [0.01, 0.005, 0.005, 0.005]
        expected = np.mean([p.entity for p in snapshots], axis=0)
        assert np.allclose(result.swa_params.entity, expected, atol=1e-12)

    def test_loss_halves_on_small_graph(self):
        g, idx = chain_graph()
        cfg = TrainConfig(model_kind="distmult", entity_dim=16, relation_dim=16, epochs=30,
                          batch_size=32, negatives=16, lr=0.05, seed=0)
        report = train(g, idx, cfg).report
        assert report.final_loss < 0.5 * report.initial_loss

    def test_non_finite_loss_raises_divergence(self, monkeypatch):
        g, idx = dense_graph()
        real = trainer_module.loss_and_grad

        def exploding(*args, **kwargs):
            _, grads = real(*args, **kwargs)
            return float("nan"), grads

        monkeypatch.setattr(trainer_module, "loss_and_grad", exploding)
        with pytest.raises(DivergenceError):
            train(g, idx, small_config())


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
