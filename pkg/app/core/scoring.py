"""
Score functions with analytic gradients.

DistMult:  f(h, r, t) = sum_i h_i r_i t_i
TuckER:    f(h, r, t) = W x_1 h x_2 r x_3 t   (core W is n_v x n_r x n_v)

Training batches are 1-vs-K: each row is a (head vector, relation vector)
query scored against K candidate tails. Head and relation vectors are
convex combinations of at most two table rows, so plain triples and
mixed (synthetic) triples share one code path.
"""
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.special import expit

from ..models.schemas import LossConfig
from .errors import NumericalError
from .numerics import Params, RngStream

logger = logging.getLogger(__name__)

MODEL_KINDS = ("distmult", "tucker")


@dataclass(eq=False)
class ModelParams:
    kind: str
    entity: np.ndarray
    relation: np.ndarray
    core: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind '{self.kind}'")
        self.entity = np.asarray(self.entity, dtype=np.float64)
        self.relation = np.asarray(self.relation, dtype=np.float64)
        if self.kind == "distmult":
            if self.core is not None:
                raise ValueError("distmult has no core tensor")
            if self.entity.shape[1] != self.relation.shape[1]:
                raise ValueError("distmult requires n_v == n_r")
        else:
            if self.core is None:
                raise ValueError("tucker requires a core tensor")
            self.core = np.asarray(self.core, dtype=np.float64)
            expected = (self.n_v, self.n_r, self.n_v)
            if self.core.shape != expected:
                raise ValueError(f"core shape {self.core.shape} != {expected}")

    @property
    def n_entities(self) -> int:
        return self.entity.shape[0]

    @property
    def n_relations(self) -> int:
        return self.relation.shape[0]

    @property
    def n_v(self) -> int:
        return self.entity.shape[1]

    @property
    def n_r(self) -> int:
        return self.relation.shape[1]

    @classmethod
    def initialize(cls, kind: str, n_entities: int, n_relations: int, n_v: int, n_r: int,
                   stream: RngStream, std: float = 0.1) -> "ModelParams":
        entity = stream.normal(std, (n_entities, n_v))
        relation = stream.normal(std, (n_relations, n_r))
        core = stream.normal(std, (n_v, n_r, n_v)) if kind == "tucker" else None
        return cls(kind, entity, relation, core)

    def reinitialize_core(self, stream: RngStream, std: float = 0.1) -> bool:
        """Re-draws the non-embedding parameters W in place. No-op for DistMult."""
        if self.core is None:
            return False
        self.core[...] = stream.normal(std, self.core.shape)
        return True

    def as_dict(self) -> Params:
        """Named views of the parameter arrays (shared memory, not copies)."""
        params = {"entity": self.entity, "relation": self.relation}
        if self.core is not None:
            params["core"] = self.core
        return params

    def copy(self) -> "ModelParams":
        return ModelParams(self.kind, self.entity.copy(), self.relation.copy(),
                           None if self.core is None else self.core.copy())

    def assert_finite(self) -> None:
        for name, arr in self.as_dict().items():
            if not np.all(np.isfinite(arr)):
                raise NumericalError(f"non-finite values in {name} parameters")


@dataclass
class DropoutConfig:
    """Rates for the three dropout sites: input head, core x relation, pre-score hidden."""
    input: float = 0.0
    hidden1: float = 0.0
    hidden2: float = 0.0
    stream: Optional[RngStream] = None

    @property
    def active(self) -> bool:
        return self.stream is not None and (self.input > 0 or self.hidden1 > 0 or self.hidden2 > 0)


def dropout_mask(stream: Optional[RngStream], shape, rate: float) -> Optional[np.ndarray]:
    """Inverted-dropout mask (kept units scaled by 1/(1-rate)); None means identity."""
    if stream is None or rate <= 0.0:
        return None
    keep = stream.random(shape) >= rate
    return keep.astype(np.float64) / (1.0 - rate)


@dataclass(eq=False)
class Batch:
    """
    Rows of (head sources, relation sources) scored against candidate tails.
    head_idx/rel_idx: [B, 2] table rows; head_w/rel_w: [B, 2] mixing weights.
    tails: [B, K] candidate tail ids; targets: [B, K] in {0, 1}; weights: [B].
    """
    head_idx: np.ndarray
    head_w: np.ndarray
    rel_idx: np.ndarray
    rel_w: np.ndarray
    tails: np.ndarray
    targets: np.ndarray
    weights: np.ndarray

    @property
    def size(self) -> int:
        return self.tails.shape[0]

    @classmethod
    def from_triples(cls, triples: np.ndarray, tails: Optional[np.ndarray] = None,
                     targets: Optional[np.ndarray] = None, weights: Optional[np.ndarray] = None) -> "Batch":
        """Unmixed rows; default candidates are the true tails with target 1."""
        triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        b = len(triples)
        ones_zero = np.tile([1.0, 0.0], (b, 1))
        if tails is None:
            tails = triples[:, 2:3]
        if targets is None:
            targets = np.ones(tails.shape)
        return cls(
            head_idx=np.stack([triples[:, 0], triples[:, 0]], axis=1),
            head_w=ones_zero,
            rel_idx=np.stack([triples[:, 1], triples[:, 1]], axis=1),
            rel_w=ones_zero.copy(),
            tails=np.asarray(tails, dtype=np.int64),
            targets=np.asarray(targets, dtype=np.float64),
            weights=np.ones(b) if weights is None else np.asarray(weights, dtype=np.float64),
        )

    @classmethod
    def concat(cls, batches) -> "Batch":
        return cls(*(np.concatenate([getattr(b, name) for b in batches], axis=0)
                     for name in ("head_idx", "head_w", "rel_idx", "rel_w", "tails", "targets", "weights")))


def _check_dims(params: ModelParams, h: np.ndarray, r: np.ndarray, t: Optional[np.ndarray] = None) -> None:
    if h.shape[-1] != params.n_v or r.shape[-1] != params.n_r or (t is not None and t.shape[-1] != params.n_v):
        raise ValueError(f"embedding dimensions {h.shape[-1]}/{r.shape[-1]} do not match model "
                         f"{params.kind} (n_v={params.n_v}, n_r={params.n_r})")


def score(params: ModelParams, h_emb: np.ndarray, r_emb: np.ndarray, t_emb: np.ndarray) -> float:
    """Score of one (possibly mixed) triple in evaluation mode."""
    h, r, t = (np.asarray(x, dtype=np.float64) for x in (h_emb, r_emb, t_emb))
    _check_dims(params, h, r, t)
    if params.kind == "distmult":
        return float(np.sum(h * r * t))
    return float(np.einsum("ijk,i,j,k->", params.core, h, r, t))


def score_partials(params: ModelParams, h_emb: np.ndarray, r_emb: np.ndarray,
                   t_emb: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(df/dh, df/dr, df/dt) at one triple."""
    h, r, t = (np.asarray(x, dtype=np.float64) for x in (h_emb, r_emb, t_emb))
    _check_dims(params, h, r, t)
    if params.kind == "distmult":
        return r * t, h * t, h * r
    w = params.core
    return (np.einsum("ijk,j,k->i", w, r, t),
            np.einsum("ijk,i,k->j", w, h, t),
            np.einsum("ijk,i,j->k", w, h, r))


def query_hidden(params: ModelParams, h: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Pre-score hidden vectors z, so that f(h, r, t) = z . t (evaluation mode)."""
    h = np.atleast_2d(np.asarray(h, dtype=np.float64))
    r = np.atleast_2d(np.asarray(r, dtype=np.float64))
    _check_dims(params, h, r)
    if params.kind == "distmult":
        return h * r
    return np.einsum("bi,ijk,bj->bk", h, params.core, r)


def score_against_all_tails(params: ModelParams, h, r) -> np.ndarray:
    """
    Scores of (h, r, v) for every entity v. `h` and `r` are either table ids
    or embedding vectors (mixed vectors are allowed).
    """
    h_vec = params.entity[h] if np.isscalar(h) or np.ndim(h) == 0 else np.asarray(h, dtype=np.float64)
    r_vec = params.relation[r] if np.isscalar(r) or np.ndim(r) == 0 else np.asarray(r, dtype=np.float64)
    z = query_hidden(params, h_vec, r_vec)[0]
    return params.entity @ z


def score_queries(params: ModelParams, heads: np.ndarray, rels: np.ndarray) -> np.ndarray:
    """[B, |V|] score matrix for a batch of (head id, relation id) queries."""
    z = query_hidden(params, params.entity[heads], params.relation[rels])
    return z @ params.entity.T


def bce_loss(logits: np.ndarray, targets: np.ndarray, cfg: LossConfig,
             weights: Optional[np.ndarray] = None) -> Tuple[float, np.ndarray]:
    """
    Weighted mean binary cross-entropy on logits with label smoothing
    y' = (1 - eps) y + eps / 2 and an optional focal factor (1 - p_correct)^gamma.
    Returns (loss, dLoss/dLogits).
    """
    f = np.asarray(logits, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if f.shape != y.shape:
        raise ValueError(f"logits {f.shape} and targets {y.shape} differ in shape")
    if not np.all(np.isfinite(f)):
        raise NumericalError("non-finite logits")
    w = np.ones_like(f) if weights is None else np.broadcast_to(np.asarray(weights, dtype=np.float64), f.shape)
    n = max(f.size, 1)

    eps = cfg.label_smoothing
    ys = (1.0 - eps) * y + eps / 2.0
    s = expit(f)
    s_neg = expit(-f)
    # y' softplus(-f) + (1 - y') softplus(f), both terms overflow-safe
    term = ys * np.logaddexp(0.0, -f) + (1.0 - ys) * np.logaddexp(0.0, f)
    dterm = s - ys

    if cfg.focal_gamma > 0:
        gamma = cfg.focal_gamma
        positive = y >= 0.5
        q = np.where(positive, s_neg, s)
        factor = q ** gamma
        dfactor = np.where(positive, -gamma * s * factor, gamma * s_neg * factor)
        dterm = dfactor * term + factor * dterm
        term = factor * term

    loss = float(np.sum(w * term) / n)
    return loss, w * dterm / n


def _forward(params: ModelParams, batch: Batch, dropout: Optional[DropoutConfig]):
    h = np.einsum("bs,bsd->bd", batch.head_w, params.entity[batch.head_idx])
    r = np.einsum("bs,bsd->bd", batch.rel_w, params.relation[batch.rel_idx])
    stream = dropout.stream if dropout is not None else None
    m0 = dropout_mask(stream, h.shape, dropout.input) if dropout else None
    h0 = h if m0 is None else h * m0
    cache = {"h": h, "r": r, "h0": h0, "m0": m0}
    if params.kind == "distmult":
        u = h0 * r
    else:
        wr = np.einsum("ijk,bj->bik", params.core, r)
        m1 = dropout_mask(stream, wr.shape, dropout.hidden1) if dropout else None
        wr1 = wr if m1 is None else wr * m1
        u = np.einsum("bi,bik->bk", h0, wr1)
        cache.update(wr1=wr1, m1=m1)
    m2 = dropout_mask(stream, u.shape, dropout.hidden2) if dropout else None
    z = u if m2 is None else u * m2
    tails_emb = params.entity[batch.tails]
    logits = np.einsum("bd,bkd->bk", z, tails_emb)
    cache.update(z=z, m2=m2, tails_emb=tails_emb)
    return logits, cache


def batch_logits(params: ModelParams, batch: Batch, dropout: Optional[DropoutConfig] = None) -> np.ndarray:
    return _forward(params, batch, dropout)[0]


def loss_and_grad(params: ModelParams, batch: Batch, loss_cfg: LossConfig,
                  dropout: Optional[DropoutConfig] = None) -> Tuple[float, Params]:
    """
    Batch loss and exact gradients for every parameter array. Rows not
    touched by the batch receive zero gradient. Mixed rows distribute their
    head/relation gradient to both source rows by their mixing weights.
    """
    logits, cache = _forward(params, batch, dropout)
    loss, g = bce_loss(logits, batch.targets, loss_cfg, batch.weights[:, None])

    grads: Dict[str, np.ndarray] = {"entity": np.zeros_like(params.entity),
                                    "relation": np.zeros_like(params.relation)}
    z, tails_emb = cache["z"], cache["tails_emb"]
    np.add.at(grads["entity"], batch.tails, g[:, :, None] * z[:, None, :])
    dz = np.einsum("bk,bkd->bd", g, tails_emb)
    du = dz if cache["m2"] is None else dz * cache["m2"]

    if params.kind == "distmult":
        dh0 = du * cache["r"]
        dr = du * cache["h0"]
    else:
        wr1 = cache["wr1"]
        dh0 = np.einsum("bk,bik->bi", du, wr1)
        dwr = np.einsum("bi,bk->bik", cache["h0"], du)
        if cache["m1"] is not None:
            dwr = dwr * cache["m1"]
        dr = np.einsum("ijk,bik->bj", params.core, dwr)
        grads["core"] = np.einsum("bik,bj->ijk", dwr, cache["r"])
    dh = dh0 if cache["m0"] is None else dh0 * cache["m0"]

    np.add.at(grads["entity"], batch.head_idx, batch.head_w[:, :, None] * dh[:, None, :])
    np.add.at(grads["relation"], batch.rel_idx, batch.rel_w[:, :, None] * dr[:, None, :])
    return loss, grads


def batch_loss(params: ModelParams, batch: Batch, loss_cfg: LossConfig,
               dropout: Optional[DropoutConfig] = None) -> float:
    logits = batch_logits(params, batch, dropout)
    return bce_loss(logits, batch.targets, loss_cfg, batch.weights[:, None])[0]
