"""
Run pipelines behind the CLI subcommands.

Each run_* function reads its inputs, writes its reports into an output
directory (refusing a non-empty one unless forced) and finishes with a
manifest. They return the written paths.
"""
import os
import logging
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from ..models import config
from ..models.schemas import BenchSpec, BinSpec, TrainConfig, degree_bins
from ..utils import helpers
from . import analysis, benchgen, checkpoint, evaluator, trainer
from .client import DatasetClient
from .errors import ConfigError, DataError
from .graph import (DegreeIndex, KnowledgeGraph, Vocabulary, add_inverses, export_vocabulary,
                    read_vocabulary, write_triples)
from .numerics import RngStream

logger = logging.getLogger(__name__)

TAYLOR_TAUS = (1e-2, 1e-3)


# --- prepare ---------------------------------------------------------------

def prepare_dataset(data_dir: str, out_dir: str, force: bool = False, argv: Sequence[str] = ()) -> List[str]:
    """
    Ingests raw splits, writes vocabularies, inverse-augmented splits,
    dataset.json and the degree summary CSVs.
    """
    graph = KnowledgeGraph.load(data_dir)
    inputs = [os.path.join(data_dir, name) for name in sorted(os.listdir(data_dir))]
    helpers.ensure_output_dir(out_dir, force)
    augmented = add_inverses(graph)
    vocab = augmented.vocabulary()

    paths = [
        export_vocabulary(os.path.join(out_dir, "entities.tsv"), list(augmented.entities)),
        export_vocabulary(os.path.join(out_dir, "relations.tsv"), list(augmented.relations)),
    ]
    for split in config.SPLITS:
        paths.append(write_triples(os.path.join(out_dir, f"{split}.txt"), getattr(augmented, split), vocab))

    original = DegreeIndex.build(augmented, original_only=True)
    entity_rows, pair_rows, hist_rows = original.summary_rows(augmented.entities, augmented.relations)
    paths.append(helpers.write_csv(os.path.join(out_dir, "degree_entities.csv"), entity_rows))
    paths.append(helpers.write_csv(os.path.join(out_dir, "degree_pairs.csv"), pair_rows))
    paths.append(helpers.write_csv(os.path.join(out_dir, "degree_histogram.csv"), hist_rows))

    paths.append(helpers.save_dataset_state(out_dir, {
        "inverse_augmented": True,
        "n_original_relations": augmented.n_original_relations,
        "n_entities": augmented.n_entities,
        "n_relations": augmented.n_relations,
        "counts": {split: int(len(getattr(graph, split))) for split in config.SPLITS},
    }))
    paths.append(helpers.write_manifest(out_dir, "prepare", list(argv), None, inputs=inputs))
    logger.info(f"Prepared {graph.n_entities} entities, {graph.n_relations} relations, "
                f"{len(graph.train)} train triples into {out_dir}")
    return paths


def load_prepared(dataset_dir: str) -> KnowledgeGraph:
    """Loads a dataset written by prepare_dataset with its saved vocabularies."""
    state = helpers.load_dataset_state(dataset_dir)
    entities = read_vocabulary(os.path.join(dataset_dir, "entities.tsv"))
    relations = read_vocabulary(os.path.join(dataset_dir, "relations.tsv"))
    vocab = Vocabulary.from_names(entities, relations)
    graph = KnowledgeGraph.load(dataset_dir, vocab, inverse_augmented=bool(state.get("inverse_augmented")),
                                n_original_relations=int(state.get("n_original_relations", 0)))
    if graph.n_entities != len(entities) or graph.n_relations != len(relations):
        raise DataError(f"{dataset_dir}: split files mention names missing from the vocabularies")
    return graph


def dataset_inputs(dataset_dir: str) -> List[str]:
    names = ["entities.tsv", "relations.tsv", helpers.STATE_FILE] + [f"{s}.txt" for s in config.SPLITS]
    return [os.path.join(dataset_dir, n) for n in names]


# --- train -----------------------------------------------------------------

def build_train_config(config_text: Optional[str] = None, source: str = "<config>", preset: Optional[str] = None,
                       ablation: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> TrainConfig:
    """Layers preset < config file < ablation < flags, then validates."""
    values: Dict[str, Any] = {}
    if preset:
        if preset not in config.PRESETS:
            raise ConfigError(f"unknown preset '{preset}' (choose from {', '.join(config.PRESETS)})")
        values.update(config.PRESETS[preset])
    if config_text:
        values.update(TrainConfig.parse_flat_text(config_text, source))
    if ablation:
        if ablation not in config.ABLATIONS:
            raise ConfigError(f"unknown ablation '{ablation}' (choose from {', '.join(config.ABLATIONS)})")
        values.update(config.ABLATIONS[ablation])
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return TrainConfig.validated(values, source)


def run_train(dataset_dir: str, out_dir: str, cfg: TrainConfig, force: bool = False, progress: bool = False,
              argv: Sequence[str] = (), extra_inputs: Sequence[str] = ()) -> List[str]:
    graph = load_prepared(dataset_dir)
    helpers.ensure_output_dir(out_dir, force)
    idx = DegreeIndex.build(graph)
    result = trainer.train(graph, idx, cfg, progress=progress)

    last_epoch = cfg.epochs
    paths = [checkpoint.save_checkpoint(os.path.join(out_dir, "model.kgmx"), result.params, cfg, last_epoch)]
    if result.swa_params is not None:
        paths.append(checkpoint.save_checkpoint(os.path.join(out_dir, "model_swa.kgmx"),
                                                result.swa_params, cfg, last_epoch))
    paths.append(helpers.write_csv(os.path.join(out_dir, "train_report.csv"), result.report.rows()))
    report = result.report
    paths.append(helpers.write_csv(os.path.join(out_dir, "train_summary.csv"), [{
        "method": report.method, "e_thresh": report.e_thresh,
        "expected_synth_per_epoch": report.expected_synth_per_epoch,
        "initial_loss": report.initial_loss, "final_loss": report.final_loss,
        "swa_epochs": report.swa_epochs,
    }]))
    paths.append(helpers.write_manifest(out_dir, "train", list(argv), cfg.seed, cfg.to_flat_text(),
                                        dataset_inputs(dataset_dir) + list(extra_inputs)))
    return paths


# --- eval ------------------------------------------------------------------

def _load_for(graph: KnowledgeGraph, path: str) -> checkpoint.Checkpoint:
    ckpt = checkpoint.load_checkpoint(path)
    ckpt.check_dataset(graph.n_entities, graph.n_relations)
    return ckpt


def _rank_rows(results: List[evaluator.RankResult]) -> List[dict]:
    return [{"head": r.query.head, "relation": r.query.relation, "tail": r.query.tail,
             "rank": r.rank, "degree": r.degree, "confidence": r.confidence} for r in results]


def run_eval(dataset_dir: str, checkpoint_path: str, out_dir: str, compare_path: Optional[str] = None,
             bins: str = "degree", tie_mode: str = "mean", split: str = "test", force: bool = False,
             progress: bool = False, argv: Sequence[str] = ()) -> List[str]:
    graph = load_prepared(dataset_dir)
    ckpt = _load_for(graph, checkpoint_path)
    helpers.ensure_output_dir(out_dir, force)
    idx = DegreeIndex.build(graph)
    known = evaluator.FilterIndex(graph.all_triples())
    queries = getattr(graph, split)
    bin_spec = _bin_spec(bins)

    results = evaluator.evaluate_queries(ckpt.params, queries, known, idx, tie_mode, progress=progress)
    paths = [
        helpers.write_csv(os.path.join(out_dir, "metrics.csv"), evaluator.overall_rows(results)),
        helpers.write_csv(os.path.join(out_dir, "metrics_by_degree.csv"),
                          evaluator.report_rows(evaluator.binned_report(results, bin_spec))),
        helpers.write_csv(os.path.join(out_dir, "ranks.csv"), _rank_rows(results)),
    ]
    inputs = dataset_inputs(dataset_dir) + [checkpoint_path]
    if compare_path:
        other = _load_for(graph, compare_path)
        other_results = evaluator.evaluate_queries(other.params, queries, known, idx, tie_mode, progress=progress)
        test = evaluator.paired_t_test([r.reciprocal for r in results], [r.reciprocal for r in other_results])
        paths.append(helpers.write_csv(os.path.join(out_dir, "metrics_compare.csv"),
                                       evaluator.overall_rows(other_results, label="compare")))
        paths.append(helpers.write_csv(os.path.join(out_dir, "metrics_by_degree_compare.csv"),
                                       evaluator.report_rows(evaluator.binned_report(other_results, bin_spec))))
        paths.append(helpers.write_csv(os.path.join(out_dir, "ttest.csv"), [test.row()]))
        inputs.append(compare_path)
        logger.info(f"Paired t-test: t={test.t_statistic:.4f}, p={test.p_value:.4g}, significant={test.significant}")
    paths.append(helpers.write_manifest(out_dir, "eval", list(argv), ckpt.config.seed,
                                        ckpt.config.to_flat_text(), inputs))
    logger.info(f"MRR {evaluator.mrr(results):.4f} over {len(results)} {split} queries")
    return paths


def _bin_spec(name: str):
    if name in ("degree", "table2"):
        return degree_bins()
    if name == "stratify":
        return BinSpec(edges=list(config.STRATIFY_EDGES))
    raise ConfigError(f"unknown bin set '{name}' (choose degree, table2 or stratify)")


# --- analyze ---------------------------------------------------------------

def sample_taylor_pairs(idx: DegreeIndex, threshold: float, n_pairs: int, stream: RngStream,
                        mode: str = "strict_fallback") -> List[tuple]:
    """Up to n_pairs (low-degree triple, same-tail partner) pairs."""
    low = idx.triples[idx.below_threshold(threshold)]
    if not len(low):
        return []
    picks = stream.choice(len(low), min(n_pairs, len(low)), replace=False)
    pairs = []
    for e in low[np.sort(picks)]:
        partners = trainer.draw_partners(e, idx, 1, stream, mode)
        if len(partners):
            pairs.append((tuple(int(x) for x in e), tuple(int(x) for x in partners[0])))
    return pairs


def taylor_summary(reports: List[analysis.TaylorCheckReport], regularizers: analysis.RegularizerReport) -> str:
    """Plain-text pass/fail summary of the expansion checks."""
    ratio = analysis.residual_decay_ratio(reports) if reports else float("nan")
    worst_fd = max((r.fd_relative_error for r in reports if not r.degenerate), default=0.0)
    lines = [
        f"pairs checked: {len(reports)}",
        f"derivative vs finite difference (max relative error): {worst_fd:.3e} "
        f"[{'PASS' if worst_fd <= 1e-4 else 'FAIL'}]",
        f"residual(tau)/residual(tau/2) at tau={TAYLOR_TAUS[0]:g}: {ratio:.4f} "
        f"[{'PASS' if 3.0 <= ratio <= 5.0 else 'FAIL'}]",
        f"pairs passing: {sum(r.passed for r in reports)}/{len(reports)}",
        f"tau estimate: {regularizers.tau:.6f}",
        f"R1: {regularizers.r1:.6e}",
        f"R2: {regularizers.r2:.6e}",
    ]
    return "\n".join(lines) + "\n"


def run_analyze(dataset_dir: str, checkpoint_path: str, out_dir: str, threshold: Optional[float] = None,
                synth_per_triple: Optional[int] = None, mix_alpha: Optional[float] = None,
                seed: Optional[int] = None, taylor_pairs: int = 100, ece_quantiles: Optional[int] = None,
                tie_mode: str = "mean", force: bool = False, progress: bool = False,
                argv: Sequence[str] = ()) -> List[str]:
    graph = load_prepared(dataset_dir)
    ckpt = _load_for(graph, checkpoint_path)
    helpers.ensure_output_dir(out_dir, force)
    cfg = ckpt.config
    threshold = cfg.degree_threshold if threshold is None else threshold
    k = cfg.synth_per_triple if synth_per_triple is None else synth_per_triple
    alpha = cfg.mix_alpha if mix_alpha is None else mix_alpha
    seed = cfg.seed if seed is None else seed
    stream = RngStream(seed, "analysis")

    idx = DegreeIndex.build(graph)
    original = DegreeIndex.build(graph, original_only=True)
    known = evaluator.FilterIndex(graph.all_triples())
    results = evaluator.evaluate_queries(ckpt.params, graph.test, known, idx, tie_mode, progress=progress)
    paths = []

    calibration = analysis.ece_from_results(results, quantiles=ece_quantiles)
    paths.append(helpers.write_csv(os.path.join(out_dir, "calibration.csv"), calibration.rows()))

    distances = analysis.embedding_distances(ckpt.params, idx, threshold)
    paths.append(helpers.write_csv(os.path.join(out_dir, "distances.csv"), distances.rows()))

    features = evaluator.query_features(graph.test, idx, original)
    strat_rows = []
    for feature in evaluator.FEATURES:
        rows = evaluator.stratified_report(results, features, feature, config.STRATIFY_EDGES)
        strat_rows.extend(evaluator.report_rows(rows, feature))
    paths.append(helpers.write_csv(os.path.join(out_dir, "stratified.csv"), strat_rows))
    cross = evaluator.stratified_report(results, features, "tail_relation", config.SUBRANGE_EDGES,
                                        secondary="other_tail_relation", secondary_edges=config.STRATIFY_EDGES)
    paths.append(helpers.write_csv(os.path.join(out_dir, "crosstab.csv"),
                                   evaluator.report_rows(cross, "tail_relation")))

    pairs = sample_taylor_pairs(idx, threshold, taylor_pairs, stream, cfg.candidate_mode)
    reports = [analysis.taylor_check(ckpt.params, e_i, e_j, TAYLOR_TAUS) for e_i, e_j in pairs]
    taylor_rows = []
    for i, report in enumerate(reports):
        for row in report.rows():
            taylor_rows.append({"pair": i, "e_i": " ".join(map(str, report.e_i)),
                                "e_j": " ".join(map(str, report.e_j)), **row,
                                "derivative": report.derivative, "fd_derivative": report.fd_derivative,
                                "r1_term": report.head_term, "r2_term": report.rel_term,
                                "delta_h_norm": report.delta_h_norm, "delta_r_norm": report.delta_r_norm,
                                "passed": int(report.passed)})
    paths.append(helpers.write_csv(os.path.join(out_dir, "taylor.csv"), taylor_rows))

    low = idx.triples[idx.below_threshold(threshold)]
    regularizers = analysis.regularizer_terms(ckpt.params, low, idx, k, alpha, stream, cfg.candidate_mode)
    paths.append(helpers.write_csv(os.path.join(out_dir, "regularizers.csv"), regularizers.rows()))
    summary_path = os.path.join(out_dir, "taylor_summary.txt")
    with open(summary_path, "w", encoding="utf-8", newline="\n") as f:
        f.write(taylor_summary(reports, regularizers))
    paths.append(summary_path)

    paths.append(helpers.write_manifest(out_dir, "analyze", list(argv), seed, cfg.to_flat_text(),
                                        dataset_inputs(dataset_dir) + [checkpoint_path]))
    logger.info(f"ECE {calibration.ece:.4f}; D_head {distances.d_head:.4f}; D_rel {distances.d_rel:.4f}")
    return paths


# --- bench / fetch ---------------------------------------------------------

def run_bench(spec: BenchSpec, out_dir: str, force: bool = False, argv: Sequence[str] = ()) -> List[str]:
    helpers.ensure_output_dir(out_dir, force)
    result = benchgen.generate(spec)
    paths = result.write(out_dir)
    paths.append(helpers.write_manifest(out_dir, "bench", list(argv), spec.seed, spec.to_flat_text()))
    return paths


def run_fetch(out_dir: str, url: Optional[str] = None, force: bool = False,
              argv: Sequence[str] = ()) -> List[str]:
    helpers.ensure_output_dir(out_dir, force)
    paths = DatasetClient(base_url=url).fetch(out_dir)
    paths.append(helpers.write_manifest(out_dir, "fetch", list(argv), None, inputs=paths))
    return paths
