"""
Knowledge graph store and degree statistics.

- Triple ingestion from tab-separated files with shared vocabularies
- Inverse-relation augmentation (r -> r + R_original)
- Degree index over the training split: in/out/total degree,
  tail-relation degree, relation-specific degree and same-tail candidates
"""
import os
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from ..models import config
from .errors import DataError, ParseError

logger = logging.getLogger(__name__)


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


@dataclass
class Vocabulary:
    """Mutable name tables; ids are dense and assigned in first-seen order."""
    entities: List[str] = field(default_factory=list)
    relations: List[str] = field(default_factory=list)
    entity_ids: Dict[str, int] = field(default_factory=dict)
    relation_ids: Dict[str, int] = field(default_factory=dict)

    @classmethod
    def from_names(cls, entities: List[str], relations: List[str]) -> "Vocabulary":
        vocab = cls()
        for name in entities:
            vocab.entity_id(name)
        for name in relations:
            vocab.relation_id(name)
        if len(vocab.entities) != len(entities) or len(vocab.relations) != len(relations):
            raise DataError("vocabulary contains duplicate names")
        return vocab

    def entity_id(self, name: str) -> int:
        idx = self.entity_ids.get(name)
        if idx is None:
            idx = len(self.entities)
            self.entity_ids[name] = idx
            self.entities.append(name)
        return idx

    def relation_id(self, name: str) -> int:
        idx = self.relation_ids.get(name)
        if idx is None:
            idx = len(self.relations)
            self.relation_ids[name] = idx
            self.relations.append(name)
        return idx


def ingest_split(path: str, vocab: Vocabulary) -> List[Triple]:
    """
    Reads one UTF-8 `head<TAB>relation<TAB>tail` file.
    Lines starting with '#' and blank lines are skipped. New names are
    appended to `vocab` in first-seen order.
    """
    triples: List[Triple] = []
    with open(path, "r", encoding="utf-8") as f:
        for line_number, raw in enumerate(f, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ParseError(path, line_number, f"expected 3 tab-separated fields, got {len(fields)}")
            h, r, t = fields
            triples.append(Triple(vocab.entity_id(h), vocab.relation_id(r), vocab.entity_id(t)))
    if not triples:
        logger.warning(f"No triples found in {path}")
    return triples


def write_triples(path: str, triples: np.ndarray, vocab: Vocabulary) -> str:
    """Emits triples as name TSV (the inverse of ingest_split)."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for h, r, t in np.asarray(triples).reshape(-1, 3):
            f.write(f"{vocab.entities[h]}\t{vocab.relations[r]}\t{vocab.entities[t]}\n")
    return path


def export_vocabulary(path: str, names: List[str]) -> str:
    """Two-column TSV: id, name."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for idx, name in enumerate(names):
            f.write(f"{idx}\t{name}\n")
    return path


def read_vocabulary(path: str) -> List[str]:
    names: List[str] = []
    with open(path, "r", encoding="utf-8") as f:
        for line_number, raw in enumerate(f, start=1):
            line = raw.rstrip("\r\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 2 or not fields[0].isdigit() or int(fields[0]) != len(names):
                raise ParseError(path, line_number, "expected '<dense id>\\t<name>'")
            names.append(fields[1])
    return names


def find_split_file(data_dir: str, split: str) -> str:
    for suffix in config.SPLIT_SUFFIXES:
        candidate = os.path.join(data_dir, split + suffix)
        if os.path.exists(candidate):
            return candidate
    raise DataError(f"missing split file: {os.path.join(data_dir, split + config.SPLIT_SUFFIXES[0])}")


def _as_array(triples) -> np.ndarray:
    arr = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class KnowledgeGraph:
    entities: Tuple[str, ...]
    relations: Tuple[str, ...]
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    inverse_augmented: bool = False
    n_original_relations: int = 0

    def __post_init__(self):
        for name in ("train", "valid", "test"):
            object.__setattr__(self, name, _as_array(getattr(self, name)))
        if not self.n_original_relations:
            object.__setattr__(self, "n_original_relations", len(self.relations))
        n_e, n_r = len(self.entities), len(self.relations)
        for name in ("train", "valid", "test"):
            arr = getattr(self, name)
            if arr.size and (arr[:, [0, 2]].max() >= n_e or arr[:, 1].max() >= n_r or arr.min() < 0):
                raise DataError(f"{name} split references ids outside the vocabulary")

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    @classmethod
    def load(cls, data_dir: str, vocab: Optional[Vocabulary] = None, inverse_augmented: bool = False,
             n_original_relations: int = 0) -> "KnowledgeGraph":
        """Ingests train/valid/test from `data_dir` with one shared vocabulary."""
        vocab = vocab or Vocabulary()
        splits = {}
        for split in config.SPLITS:
            path = find_split_file(data_dir, split)
            splits[split] = ingest_split(path, vocab)
            logger.info(f"Loaded {len(splits[split])} {split} triples from {path}")
        return cls(
            entities=tuple(vocab.entities),
            relations=tuple(vocab.relations),
            train=splits["train"],
            valid=splits["valid"],
            test=splits["test"],
            inverse_augmented=inverse_augmented,
            n_original_relations=n_original_relations,
        )

    def vocabulary(self) -> Vocabulary:
        return Vocabulary.from_names(list(self.entities), list(self.relations))

    def original_train(self) -> np.ndarray:
        """Training triples without their inverse copies."""
        if not self.inverse_augmented:
            return self.train
        return self.train[: len(self.train) // 2]

    def all_triples(self) -> np.ndarray:
        return np.concatenate([self.train, self.valid, self.test], axis=0)


def _invert(triples: np.ndarray, offset: int) -> np.ndarray:
    if not len(triples):
        return triples.copy()
    return np.stack([triples[:, 2], triples[:, 1] + offset, triples[:, 0]], axis=1)


def add_inverses(g: KnowledgeGraph) -> KnowledgeGraph:
    """
    Appends (t, r + R, h) for every triple of every split and doubles the
    relation table. Inverse relation names carry config.INVERSE_SUFFIX.
    """
    if g.inverse_augmented:
        raise DataError("graph is already inverse-augmented")
    offset = g.n_relations
    relations = tuple(g.relations) + tuple(name + config.INVERSE_SUFFIX for name in g.relations)
    return replace(
        g,
        relations=relations,
        train=np.concatenate([g.train, _invert(g.train, offset)], axis=0),
        valid=np.concatenate([g.valid, _invert(g.valid, offset)], axis=0),
        test=np.concatenate([g.test, _invert(g.test, offset)], axis=0),
        inverse_augmented=True,
        n_original_relations=offset,
    )


class DegreeIndex:
    """
    Degree statistics over one triple set (the training split).

    Duplicate triples are counted with multiplicity. The index is read-only
    after construction.
    """

    def __init__(self, triples: np.ndarray, n_entities: int, n_relations: int):
        triples = _as_array(triples)
        self.triples = triples
        self.n_entities = n_entities
        self.n_relations = n_relations

        heads, rels, tails = triples[:, 0], triples[:, 1], triples[:, 2]
        self.in_degree = np.bincount(tails, minlength=n_entities).astype(np.int64)
        self.out_degree = np.bincount(heads, minlength=n_entities).astype(np.int64)
        self.in_degree.flags.writeable = False
        self.out_degree.flags.writeable = False

        self._tail_rel: Counter = Counter(zip(tails.tolist(), rels.tolist()))
        self._rel_specific: Counter = Counter()
        for h, r, t in triples.tolist():
            self._rel_specific[(h, r)] += 1
            if t != h:
                self._rel_specific[(t, r)] += 1

        # Sorted pair keys for vectorised tail-relation lookups
        keys = tails * n_relations + rels
        self._pair_keys, self._pair_counts = np.unique(keys, return_counts=True)

        # by_tail as CSR over a stable sort on tail
        order = np.argsort(tails, kind="stable")
        self._by_tail_rows = order
        self._by_tail_offsets = np.concatenate([[0], np.cumsum(self.in_degree)])

    @classmethod
    def build(cls, g: KnowledgeGraph, original_only: bool = False) -> "DegreeIndex":
        triples = g.original_train() if original_only else g.train
        return cls(triples, g.n_entities, g.n_relations)

    @property
    def total_degree(self) -> np.ndarray:
        return self.in_degree + self.out_degree

    def tail_relation_degree(self, v: int, r: int) -> int:
        return self._tail_rel.get((int(v), int(r)), 0)

    def tail_relation_degrees(self, triples: np.ndarray) -> np.ndarray:
        """Vectorised d_tail(t, r) for each row (h, r, t)."""
        triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        keys = triples[:, 2] * self.n_relations + triples[:, 1]
        pos = np.searchsorted(self._pair_keys, keys)
        pos_clipped = np.minimum(pos, max(len(self._pair_keys) - 1, 0))
        if not len(self._pair_keys):
            return np.zeros(len(keys), dtype=np.int64)
        found = self._pair_keys[pos_clipped] == keys
        return np.where(found, self._pair_counts[pos_clipped], 0).astype(np.int64)

    def tail_relation_counts(self) -> np.ndarray:
        """Sizes of every observed (tail, relation) pair."""
        return np.array(list(self._tail_rel.values()), dtype=np.int64)

    def other_tail_relation_degree(self, v: int, r: int) -> int:
        return int(self.in_degree[v]) - self.tail_relation_degree(v, r)

    def relation_specific_degree(self, v: int, r: int) -> int:
        return self._rel_specific.get((int(v), int(r)), 0)

    def by_tail(self, v: int) -> np.ndarray:
        """Training triples whose tail is `v`, in input order."""
        lo, hi = self._by_tail_offsets[v], self._by_tail_offsets[v + 1]
        return self.triples[self._by_tail_rows[lo:hi]]

    def same_tail_candidates(self, e, strict: bool) -> np.ndarray:
        """
        Mixing partners for training triple `e`.
        strict: same tail, different head AND different relation.
        lenient: same tail, any triple other than `e` itself.
        """
        h, r, t = (int(x) for x in e)
        rows = self.by_tail(t)
        if strict:
            mask = (rows[:, 0] != h) & (rows[:, 1] != r)
        else:
            mask = ~((rows[:, 0] == h) & (rows[:, 1] == r))
        return rows[mask]

    def candidates(self, e, mode: str = "strict_fallback") -> np.ndarray:
        if mode == "lenient":
            return self.same_tail_candidates(e, strict=False)
        found = self.same_tail_candidates(e, strict=True)
        if mode == "strict_fallback" and not len(found):
            return self.same_tail_candidates(e, strict=False)
        return found

    def below_threshold(self, threshold: float) -> np.ndarray:
        """Boolean mask over self.triples: d_tail(t, r) < threshold."""
        return self.tail_relation_degrees(self.triples) < threshold

    def summary_rows(self, entities: Tuple[str, ...], relations: Tuple[str, ...]) -> Tuple[List[dict], List[dict], List[dict]]:
        """Rows for the per-entity, per-pair and histogram degree CSVs."""
        entity_rows = [
            {"entity_id": v, "entity": entities[v], "in_degree": int(self.in_degree[v]),
             "out_degree": int(self.out_degree[v]), "total_degree": int(self.total_degree[v])}
            for v in range(self.n_entities)
        ]
        pair_rows = [
            {"entity_id": v, "entity": entities[v], "relation_id": r, "relation": relations[r],
             "tail_relation_degree": count,
             "other_tail_relation_degree": int(self.in_degree[v]) - count}
            for (v, r), count in sorted(self._tail_rel.items())
        ]
        histogram = Counter(self._tail_rel.values())
        hist_rows = [{"tail_relation_degree": d, "pairs": n} for d, n in sorted(histogram.items())]
        return entity_rows, pair_rows, hist_rows
