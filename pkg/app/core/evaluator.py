"""
Filtered link-prediction evaluation.

- Filtered tail ranking with mean, optimistic or pessimistic tie handling
- MRR, Hits@k and mean rank
- Degree-binned and degree-stratified reports (with an optional cross-tab)
- Paired t-test on per-query reciprocal ranks
"""
import math
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.special import expit
from tqdm import tqdm

from ..models import config
from ..models.schemas import BinSpec, degree_bins
from .graph import DegreeIndex, Triple
from .numerics import t_two_sided_p
from .scoring import ModelParams, score_queries

logger = logging.getLogger(__name__)

TIE_MODES = ("mean", "optimistic", "pessimistic")
FEATURES = ("head_in", "head_out", "tail_in", "tail_out", "tail_relation", "other_tail_relation")


class FilterIndex:
    """Known true tails per (head, relation) over every split."""

    def __init__(self, triples: np.ndarray):
        triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        grouped: Dict[tuple, set] = {}
        for h, r, t in triples.tolist():
            grouped.setdefault((h, r), set()).add(t)
        self._tails = {key: np.fromiter(sorted(tails), dtype=np.int64) for key, tails in grouped.items()}
        self._empty = np.zeros(0, dtype=np.int64)

    def known_tails(self, h: int, r: int) -> np.ndarray:
        return self._tails.get((int(h), int(r)), self._empty)

    def __contains__(self, triple) -> bool:
        h, r, t = (int(x) for x in triple)
        return t in self.known_tails(h, r)


@dataclass
class RankResult:
    query: Triple
    rank: float
    degree: int
    confidence: float = float("nan")

    @property
    def reciprocal(self) -> float:
        return 1.0 / self.rank


def rank_from_scores(scores: np.ndarray, target: int, filtered: Optional[np.ndarray] = None,
                     tie_mode: str = "mean") -> float:
    """
    Rank of `target` among all candidates except the `filtered` ones
    (the target itself is never filtered).
    """
    if tie_mode not in TIE_MODES:
        raise ValueError(f"unknown tie mode '{tie_mode}'")
    valid = np.ones(len(scores), dtype=bool)
    if filtered is not None and len(filtered):
        valid[filtered] = False
    valid[target] = False
    s_t = scores[target]
    competitors = scores[valid]
    greater = int(np.sum(competitors > s_t))
    ties = int(np.sum(competitors == s_t))
    if tie_mode == "optimistic":
        return float(1 + greater)
    if tie_mode == "pessimistic":
        return float(1 + greater + ties)
    return 1.0 + greater + ties / 2.0


def filtered_rank(params: ModelParams, query, known: Optional[FilterIndex], idx: Optional[DegreeIndex] = None,
                  tie_mode: str = "mean") -> RankResult:
    """Ranks the true tail of one query; `known=None` gives the unfiltered rank."""
    h, r, t = (int(x) for x in query)
    scores = score_queries(params, np.array([h]), np.array([r]))[0]
    filtered = known.known_tails(h, r) if known is not None else None
    rank = rank_from_scores(scores, t, filtered, tie_mode)
    degree = idx.tail_relation_degree(t, r) if idx is not None else 0
    return RankResult(Triple(h, r, t), rank, degree, float(expit(scores[t])))


def evaluate_queries(params: ModelParams, queries: np.ndarray, known: Optional[FilterIndex],
                     idx: Optional[DegreeIndex] = None, tie_mode: str = "mean", batch_size: int = 256,
                     progress: bool = False) -> List[RankResult]:
    """Batched filtered_rank over every query row (h, r, t)."""
    queries = np.asarray(queries, dtype=np.int64).reshape(-1, 3)
    results: List[RankResult] = []
    starts = range(0, len(queries), batch_size)
    for start in tqdm(starts, disable=not progress, desc="eval"):
        chunk = queries[start:start + batch_size]
        scores = score_queries(params, chunk[:, 0], chunk[:, 1])
        for row, (h, r, t) in zip(scores, chunk.tolist()):
            filtered = known.known_tails(h, r) if known is not None else None
            rank = rank_from_scores(row, t, filtered, tie_mode)
            degree = idx.tail_relation_degree(t, r) if idx is not None else 0
            results.append(RankResult(Triple(h, r, t), rank, degree, float(expit(row[t]))))
    logger.info(f"Ranked {len(results)} queries (tie mode: {tie_mode})")
    return results


def _ranks(ranks) -> np.ndarray:
    arr = np.asarray([r.rank if isinstance(r, RankResult) else r for r in ranks], dtype=np.float64)
    if not arr.size:
        raise ValueError("cannot aggregate an empty rank list")
    return arr


def mrr(ranks) -> float:
    return float(np.mean(1.0 / _ranks(ranks)))


def hits_at_k(ranks, k: int) -> float:
    return float(np.mean(_ranks(ranks) <= k))


def mean_rank(ranks) -> float:
    return float(np.mean(_ranks(ranks)))


def metric_summary(ranks, hits: Sequence[int] = config.HITS_AT) -> Dict[str, float]:
    summary = {"count": len(ranks), "mrr": mrr(ranks), "mean_rank": mean_rank(ranks)}
    for k in hits:
        summary[f"hits@{k}"] = hits_at_k(ranks, k)
    return summary


@dataclass
class BinRow:
    label: str
    lo: float
    hi: float
    count: int
    metrics: Dict[str, float]
    column: Optional[str] = None

    @property
    def mrr(self) -> float:
        return self.metrics["mrr"]


def assign_bins(values: np.ndarray, bins: BinSpec) -> np.ndarray:
    """Half-open bin index per value, -1 when outside every bin."""
    values = np.asarray(values, dtype=np.float64)
    edges = np.asarray(bins.edges, dtype=np.float64)
    pos = np.searchsorted(edges, values, side="right") - 1
    return np.where((pos >= 0) & (pos < len(edges) - 1), pos, -1)


def binned_report(results: List[RankResult], bins: Optional[BinSpec] = None) -> List[BinRow]:
    """Metrics per tail-relation degree bin. Empty bins are left out."""
    bins = bins or degree_bins()
    degrees = np.array([r.degree for r in results], dtype=np.float64)
    return _group(results, assign_bins(degrees, bins), bins)


def _group(results: List[RankResult], assignment: np.ndarray, bins: BinSpec,
           column: Optional[str] = None) -> List[BinRow]:
    rows: List[BinRow] = []
    for i in range(len(bins.edges) - 1):
        members = [res for res, b in zip(results, assignment) if b == i]
        if not members:
            continue
        rows.append(BinRow(bins.label(i), bins.edges[i], bins.edges[i + 1], len(members),
                           metric_summary(members), column))
    return rows


def query_features(queries: np.ndarray, idx: DegreeIndex, original_idx: Optional[DegreeIndex] = None
                   ) -> Dict[str, np.ndarray]:
    """
    Degree features of each query (h, r, t). In/out degrees come from
    `original_idx` (the graph before inverse augmentation) when given;
    tail-relation features always come from `idx`.
    """
    queries = np.asarray(queries, dtype=np.int64).reshape(-1, 3)
    base = original_idx or idx
    heads, tails = queries[:, 0], queries[:, 2]
    tail_rel = idx.tail_relation_degrees(queries)
    return {
        "head_in": base.in_degree[heads],
        "head_out": base.out_degree[heads],
        "tail_in": base.in_degree[tails],
        "tail_out": base.out_degree[tails],
        "tail_relation": tail_rel,
        "other_tail_relation": idx.in_degree[tails] - tail_rel,
    }


def stratified_report(results: List[RankResult], features: Dict[str, np.ndarray], feature: str,
                      bin_edges: Sequence[float], secondary: Optional[str] = None,
                      secondary_edges: Optional[Sequence[float]] = None) -> List[BinRow]:
    """
    Metrics grouped by one degree feature. With `secondary`, every primary bin
    is split further by the secondary feature (rows carry the secondary bin
    label in `column`).
    """
    for name in (feature, secondary):
        if name is not None and name not in FEATURES:
            raise ValueError(f"unknown degree feature '{name}'")
    primary = BinSpec(edges=list(bin_edges))
    assignment = assign_bins(features[feature], primary)
    if len(assignment) != len(results):
        raise ValueError("feature arrays must align with the results")
    if secondary is None:
        return _group(results, assignment, primary)

    second = BinSpec(edges=list(secondary_edges if secondary_edges is not None else bin_edges))
    second_assignment = assign_bins(features[secondary], second)
    rows: List[BinRow] = []
    for i in range(len(primary.edges) - 1):
        in_primary = assignment == i
        for j in range(len(second.edges) - 1):
            members = [res for res, keep in zip(results, in_primary & (second_assignment == j)) if keep]
            if members:
                rows.append(BinRow(primary.label(i), primary.edges[i], primary.edges[i + 1], len(members),
                                   metric_summary(members), second.label(j)))
    return rows


def report_rows(rows: List[BinRow], feature: str = "tail_relation") -> List[dict]:
    """Long CSV form: one line per (bin, metric)."""
    out = []
    for row in rows:
        for metric, value in row.metrics.items():
            if metric == "count":
                continue
            line = {"feature": feature, "bin": row.label}
            if row.column is not None:
                line["secondary_bin"] = row.column
            line.update({"metric": metric, "count": row.count, "value": value})
            out.append(line)
    return out


def overall_rows(results: List[RankResult], label: str = "all") -> List[dict]:
    summary = metric_summary(results)
    return [{"metric": m, "bin": label, "count": summary["count"], "value": v}
            for m, v in summary.items() if m != "count"]


@dataclass
class TTestResult:
    n: int
    mean_difference: float
    t_statistic: float
    p_value: float
    significant: bool
    no_difference: bool = False

    def row(self) -> dict:
        return {"n": self.n, "mean_difference": self.mean_difference, "t": self.t_statistic,
                "p_value": self.p_value, "significant": int(self.significant),
                "no_difference": int(self.no_difference)}


def paired_t_test(a: Sequence[float], b: Sequence[float], alpha: float = 0.05) -> TTestResult:
    """Two-sided paired t-test on aligned per-query values (a - b)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("paired samples must have equal length")
    n = len(a)
    if n < 2:
        raise ValueError("paired t-test needs at least two pairs")
    d = a - b
    mean = float(np.mean(d))
    if np.all(d == 0):
        return TTestResult(n, 0.0, float("nan"), 1.0, False, no_difference=True)
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        return TTestResult(n, mean, math.copysign(math.inf, mean), 0.0, True)
    t = mean / (sd / math.sqrt(n))
    p = t_two_sided_p(t, n - 1)
    return TTestResult(n, mean, t, p, p < alpha)
