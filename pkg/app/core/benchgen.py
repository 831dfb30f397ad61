"""
Synthetic degree-skewed benchmark graphs.

Training triples of every relation are laid out on (tail, relation) pairs
whose sizes follow a power law in pair rank. A share of the relations is
generated as noisy two-hop compositions of base relations, so held-out
triples of those relations are predictable from the training graph. A
generated graph whose rank-frequency slope misses the requested skew is
rejected.
Valid/test triples only use entities and relations seen in training and
never repeat a training triple.
"""
import os
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Set, Tuple

import numpy as np

from ..models import config
from ..models.schemas import BenchSpec
from .errors import ConfigError
from .graph import DegreeIndex, KnowledgeGraph, write_triples
from .numerics import RngStream

logger = logging.getLogger(__name__)

SLOPE_TOLERANCE = 0.2
MIN_LOW_BIN_SHARE = 0.25
MAX_DRAW_ATTEMPTS = 200


def power_law_quotas(total: int, skew: float, n_pairs: int, cap: int) -> np.ndarray:
    """
    Non-increasing sizes floor(C * i^-skew) for ranks i = 1..n_pairs, each at
    most `cap`, with C chosen so they sum to `total` (any remainder is spread
    one by one from the top rank). Zero-size ranks are dropped.
    """
    if total < 1:
        return np.zeros(0, dtype=np.int64)
    if total > n_pairs * cap:
        raise ConfigError(f"cannot place {total} triples on {n_pairs} pairs of at most {cap}")
    weights = np.arange(1, n_pairs + 1, dtype=np.float64) ** -skew

    def fill(c: float) -> np.ndarray:
        return np.minimum(np.floor(c * weights), cap).astype(np.int64)

    lo, hi = 0.0, (cap + 1) / weights[-1]
    for _ in range(200):
        mid = (lo + hi) / 2
        if fill(mid).sum() <= total:
            lo = mid
        else:
            hi = mid
    quotas = fill(lo)
    remainder = total - int(quotas.sum())
    i = 0
    while remainder:
        if quotas[i] < cap:
            quotas[i] += 1
            remainder -= 1
        i = (i + 1) % n_pairs
    quotas = np.sort(quotas)[::-1]
    return quotas[quotas > 0]


def rank_frequency_slope(pair_counts: np.ndarray) -> float:
    """
    Least-squares slope of log c against log N(>= c) over the distinct pair
    sizes c. A power law c_i ~ i^-s gives slope -s.
    """
    counts = np.asarray(pair_counts, dtype=np.int64)
    values = np.unique(counts[counts > 0])
    if len(values) < 2:
        return float("nan")
    at_least = np.array([np.sum(counts >= c) for c in values], dtype=np.float64)
    return float(np.polyfit(np.log(at_least), np.log(values.astype(np.float64)), 1)[0])


@dataclass
class BenchCheck:
    slope: float
    skew: float
    low_bin_share: float
    leaked: int

    @property
    def slope_ok(self) -> bool:
        return abs(-self.slope - self.skew) <= SLOPE_TOLERANCE

    @property
    def low_bin_ok(self) -> bool:
        return self.low_bin_share >= MIN_LOW_BIN_SHARE

    @property
    def passed(self) -> bool:
        return self.slope_ok and self.low_bin_ok and self.leaked == 0

    def rows(self) -> List[dict]:
        return [
            {"check": "rank_frequency_slope", "value": self.slope, "target": -self.skew, "ok": int(self.slope_ok)},
            {"check": "test_low_bin_share", "value": self.low_bin_share, "target": MIN_LOW_BIN_SHARE,
             "ok": int(self.low_bin_ok)},
            {"check": "test_train_overlap", "value": self.leaked, "target": 0, "ok": int(self.leaked == 0)},
        ]


@dataclass
class BenchResult:
    spec: BenchSpec
    graph: KnowledgeGraph
    check: BenchCheck
    compositions: Dict[int, Tuple[int, int]] = field(default_factory=dict)

    def write(self, out_dir: str) -> List[str]:
        """Writes train/valid/test TSVs, the spec echo and the self-check CSV."""
        from ..utils.helpers import write_csv

        os.makedirs(out_dir, exist_ok=True)
        vocab = self.graph.vocabulary()
        paths = [write_triples(os.path.join(out_dir, f"{split}.txt"), getattr(self.graph, split), vocab)
                 for split in config.SPLITS]
        spec_path = os.path.join(out_dir, "bench_spec.txt")
        with open(spec_path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.spec.to_flat_text())
        paths.append(spec_path)
        paths.append(write_csv(os.path.join(out_dir, "bench_check.csv"), self.check.rows()))
        logger.info(f"Benchmark written to {out_dir}")
        return paths


def _functional_heads(tails: np.ndarray, quotas: np.ndarray, n_entities: int,
                      stream: RngStream) -> List[Tuple[int, int]]:
    """Each head used once per relation; pairs are (head, tail)."""
    pool = stream.permutation(n_entities).tolist()
    edges = []
    for t, c in zip(tails.tolist(), quotas.tolist()):
        picked = [h for h in pool if h != t][:c]
        chosen = set(picked)
        pool = [h for h in pool if h not in chosen]
        edges.extend((h, t) for h in picked)
    return edges


def _sampled_heads(tails: np.ndarray, quotas: np.ndarray, n_entities: int,
                   stream: RngStream) -> List[Tuple[int, int]]:
    edges = []
    for t, c in zip(tails.tolist(), quotas.tolist()):
        picks = stream.choice(n_entities - 1, c, replace=False)
        edges.extend((int(h + (h >= t)), t) for h in picks)
    return edges


def _base_relation(total: int, spec: BenchSpec, stream: RngStream) -> List[Tuple[int, int]]:
    n = spec.n_entities
    quotas = power_law_quotas(total, spec.skew, n, n - 1)
    tails = stream.permutation(n)[:len(quotas)]
    if total <= n - 1:
        return _functional_heads(tails, quotas, n, stream)
    return _sampled_heads(tails, quotas, n, stream)


def _compose(first: List[Tuple[int, int]], second: List[Tuple[int, int]]) -> List[Tuple[int, int]]:
    """(x, z) for every x -first-> y -second-> z with x != z, in sorted order."""
    by_head: Dict[int, List[int]] = {}
    for y, z in second:
        by_head.setdefault(y, []).append(z)
    pairs = {(x, z) for x, y in first for z in by_head.get(y, []) if x != z}
    return sorted(pairs)


def _composed_relation(pool: List[Tuple[int, int]], total: int, spec: BenchSpec,
                       stream: RngStream) -> Tuple[List[Tuple[int, int]], int]:
    """
    Lays a composed relation out on the same power-law pair sizes as a base
    relation. Tails with the most composition paths take the largest quotas;
    each quota is filled with path heads first (up to 1 - noise of the total)
    and random heads after that. Returns the edges and the number of path edges.
    """
    n = spec.n_entities
    quotas = power_law_quotas(total, spec.skew, n, n - 1)
    paths: Dict[int, List[int]] = {}
    for h, t in pool:
        paths.setdefault(t, []).append(h)
    ranked = sorted(paths, key=lambda t: -len(paths[t]))
    rest = [v for v in stream.permutation(n).tolist() if v not in paths]
    budget = total - int(round(spec.noise * total))
    edges: List[Tuple[int, int]] = []
    n_paths = 0
    for t, q in zip(ranked + rest, quotas.tolist()):
        heads = paths.get(t, [])[:min(q, budget)]
        budget -= len(heads)
        n_paths += len(heads)
        if len(heads) < q:
            used = set(heads)
            heads = heads + [h for h in stream.permutation(n).tolist() if h != t and h not in used][:q - len(heads)]
        edges.extend((h, t) for h in heads)
    return edges, n_paths


def generate(spec: BenchSpec) -> BenchResult:
    """Deterministic in `spec` (the seed included)."""
    stream = RngStream(spec.seed, "bench")
    n_e, n_r = spec.n_entities, spec.n_relations
    counts = spec.split_counts()
    n_composed = int(spec.compose_fraction * n_r)
    if n_r - n_composed < 2:
        n_composed = 0
    n_base = n_r - n_composed

    train_share, train_rem = divmod(counts["train"], n_r)
    held_total = counts["valid"] + counts["test"]
    held_share, held_rem = divmod(held_total, n_r)

    train: Dict[int, List[Tuple[int, int]]] = {}
    for r in range(n_base):
        train[r] = _base_relation(train_share + (r < train_rem), spec, stream)

    compositions: Dict[int, Tuple[int, int]] = {}
    composed_pool: Dict[int, List[Tuple[int, int]]] = {}
    for r in range(n_base, n_r):
        first, second = (int(x) for x in stream.choice(n_base, 2, replace=False))
        compositions[r] = (first, second)
        pool = _compose(train[first], train[second])
        order = stream.permutation(len(pool)).tolist() if pool else []
        composed_pool[r] = [pool[i] for i in order]
        train[r], n_paths = _composed_relation(composed_pool[r], train_share + (r < train_rem), spec, stream)
        logger.debug(f"relation r{r:02d} = r{second:02d} o r{first:02d}: {n_paths} composed, "
                     f"{len(train[r]) - n_paths} noise")

    train_triples = np.array([(h, r, t) for r in range(n_r) for h, t in train[r]], dtype=np.int64).reshape(-1, 3)
    train_set: Set[Tuple[int, int, int]] = set(map(tuple, train_triples.tolist()))
    seen_entities = np.unique(train_triples[:, [0, 2]])
    held: List[Tuple[int, int, int]] = []
    held_set: Set[Tuple[int, int, int]] = set()
    seen = set(seen_entities.tolist())

    for r in range(n_r):
        quota = held_share + (r < held_rem)
        picked = 0
        for h, t in composed_pool.get(r, []):
            if picked == quota:
                break
            if (h, r, t) in train_set or (h, r, t) in held_set or h not in seen or t not in seen:
                continue
            held.append((h, r, t))
            held_set.add((h, r, t))
            picked += 1
        tails = sorted({t for _, t in train[r]})
        if quota and not tails:
            raise ConfigError(f"spec is infeasible: relation {r} has no training triples")
        attempts = 0
        while picked < quota:
            attempts += 1
            if attempts > MAX_DRAW_ATTEMPTS * max(quota, 1):
                raise ConfigError(f"spec is infeasible: cannot draw {quota} held-out triples for relation {r}")
            t = tails[int(stream.integers(0, len(tails)))]
            h = int(seen_entities[int(stream.integers(0, len(seen_entities)))])
            triple = (h, r, t)
            if h == t or triple in train_set or triple in held_set:
                continue
            held.append(triple)
            held_set.add(triple)
            picked += 1

    order = stream.permutation(len(held))
    held_arr = np.array(held, dtype=np.int64).reshape(-1, 3)[order]
    valid, test = held_arr[:counts["valid"]], held_arr[counts["valid"]:]

    graph = KnowledgeGraph(
        entities=tuple(f"e{i:04d}" for i in range(n_e)),
        relations=tuple(f"r{j:02d}" for j in range(n_r)),
        train=train_triples, valid=valid, test=test,
    )
    check = self_check(graph, spec)
    if not check.slope_ok:
        raise ConfigError(f"rank-frequency slope {check.slope:.3f} is outside {-spec.skew} +/- {SLOPE_TOLERANCE}")
    if not check.low_bin_ok:
        logger.warning(f"Only {check.low_bin_share:.1%} of test triples fall in the [1, 10) degree bin")
    logger.info(f"Generated benchmark: {len(train_triples)} train, {len(valid)} valid, {len(test)} test, "
                f"{n_composed} composed relations")
    return BenchResult(spec=spec, graph=graph, check=check, compositions=compositions)


def self_check(graph: KnowledgeGraph, spec: BenchSpec) -> BenchCheck:
    idx = DegreeIndex(graph.train, graph.n_entities, graph.n_relations)
    pair_counts = idx.tail_relation_counts()
    degrees = idx.tail_relation_degrees(graph.test)
    low = float(np.mean((degrees >= 1) & (degrees < 10))) if len(degrees) else 0.0
    train_set = set(map(tuple, graph.train.tolist()))
    leaked = sum(1 for row in graph.test.tolist() if tuple(row) in train_set)
    return BenchCheck(slope=rank_frequency_slope(pair_counts), skew=spec.skew, low_bin_share=low, leaked=leaked)


def write_bench(spec: BenchSpec, out_dir: str) -> BenchResult:
    result = generate(spec)
    result.write(out_dir)
    return result
