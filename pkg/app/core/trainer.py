"""
Training loops.

Methods: standard, oversample, reweight, focal and kg_mixup. Every method
scores each positive against N uniformly corrupted tails with BCE and
takes one Adam step per batch. kg_mixup additionally pre-trains, then
mixes every low tail-relation-degree triple with k same-tail partners and
adds beta times the mean BCE of those synthetic triples. Optional SWA keeps
an equal-weight running average of the parameters after each late epoch.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
from tqdm import trange

from ..models.schemas import LossConfig, TrainConfig
from .errors import DataError, DivergenceError
from .graph import DegreeIndex, KnowledgeGraph, Triple
from .numerics import AdamState, RngStream, adam_step, beta_samples
from .scoring import Batch, DropoutConfig, ModelParams, loss_and_grad

logger = logging.getLogger(__name__)


@dataclass
class MixedTriple:
    mixed_head: np.ndarray
    mixed_rel: np.ndarray
    tail: int
    lam: float
    source_e1: Triple
    source_e2: Triple


def sample_negative_tails(stream: RngStream, tails: np.ndarray, n: int, n_entities: int) -> np.ndarray:
    """[B, n] tails drawn uniformly from V minus each row's true tail."""
    if n_entities < 2:
        raise ValueError("negative sampling needs at least two entities")
    if n < 1:
        raise ValueError("need at least one negative per positive")
    tails = np.asarray(tails, dtype=np.int64).reshape(-1, 1)
    draws = stream.integers(0, n_entities - 1, size=(tails.shape[0], n))
    return draws + (draws >= tails)


def sample_negatives(stream: RngStream, positive, n: int, n_entities: int) -> np.ndarray:
    """n corrupted copies of `positive` with the tail replaced."""
    h, r, t = (int(x) for x in positive)
    corrupted = sample_negative_tails(stream, np.array([t]), n, n_entities)[0]
    return np.stack([np.full(n, h), np.full(n, r), corrupted], axis=1)


def mix(e1, e2, lam: float, params: ModelParams) -> MixedTriple:
    """Convex combination of head and relation embeddings; the tail is kept from e1."""
    e1, e2 = Triple(*(int(x) for x in e1)), Triple(*(int(x) for x in e2))
    if e1.tail != e2.tail:
        raise ValueError(f"cannot mix triples with different tails: {e1} / {e2}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    head = lam * params.entity[e1.head] + (1.0 - lam) * params.entity[e2.head]
    rel = lam * params.relation[e1.relation] + (1.0 - lam) * params.relation[e2.relation]
    return MixedTriple(head, rel, e1.tail, float(lam), e1, e2)


def draw_partners(e, idx: DegreeIndex, k: int, stream: RngStream, mode: str = "strict_fallback") -> np.ndarray:
    """k same-tail partners; with replacement only when fewer than k exist."""
    candidates = idx.candidates(e, mode)
    if not len(candidates):
        return candidates
    replace = len(candidates) < k
    picks = stream.choice(len(candidates), k, replace=replace)
    return candidates[picks]


def synth_batch(e, idx: DegreeIndex, cfg: TrainConfig, stream: RngStream,
                params: ModelParams) -> List[MixedTriple]:
    """Synthetic positives for `e` when d_tail(t, r) < eta, else nothing."""
    h, r, t = (int(x) for x in e)
    if not idx.tail_relation_degree(t, r) < cfg.degree_threshold:
        return []
    partners = draw_partners(e, idx, cfg.synth_per_triple, stream, cfg.candidate_mode)
    if not len(partners):
        return []
    lams = beta_samples(stream, cfg.mix_alpha, len(partners))
    return [mix((h, r, t), p, lam, params) for p, lam in zip(partners, lams)]


def _synthetic_rows(positives: np.ndarray, below: np.ndarray, idx: DegreeIndex, cfg: TrainConfig,
                    stream: RngStream) -> Tuple[Optional[Batch], int, int]:
    """Index/weight form of synth_batch for a whole batch of positives."""
    head_idx, head_w, rel_idx, rel_w, tails = [], [], [], [], []
    skipped = 0
    for e in positives[below]:
        partners = draw_partners(e, idx, cfg.synth_per_triple, stream, cfg.candidate_mode)
        if not len(partners):
            skipped += 1
            continue
        lams = beta_samples(stream, cfg.mix_alpha, len(partners))
        for p, lam in zip(partners, lams):
            head_idx.append((e[0], p[0]))
            head_w.append((lam, 1.0 - lam))
            rel_idx.append((e[1], p[1]))
            rel_w.append((lam, 1.0 - lam))
            tails.append((e[2],))
    if not tails:
        return None, 0, skipped
    n = len(tails)
    batch = Batch(
        head_idx=np.array(head_idx, dtype=np.int64),
        head_w=np.array(head_w, dtype=np.float64),
        rel_idx=np.array(rel_idx, dtype=np.int64),
        rel_w=np.array(rel_w, dtype=np.float64),
        tails=np.array(tails, dtype=np.int64),
        targets=np.ones((n, 1)),
        weights=np.ones(n),
    )
    return batch, n, skipped


def oversample_order(degrees: np.ndarray, threshold: float) -> np.ndarray:
    """Row indices for one over-sampled epoch: each low triple repeated ceil(eta - d) extra times."""
    extra = np.where(degrees < threshold, np.ceil(threshold - degrees), 0).astype(np.int64)
    return np.repeat(np.arange(len(degrees)), 1 + extra)


def reweight_weights(degrees: np.ndarray, threshold: float, cap: float) -> np.ndarray:
    """w = min(eta / max(1, d), cap) below the threshold, 1 elsewhere."""
    w = np.minimum(threshold / np.maximum(degrees, 1), cap)
    return np.where(degrees < threshold, w, 1.0)


class SWAAverager:
    """Equal-weight running mean of parameter snapshots."""

    def __init__(self):
        self.n_averaged = 0
        self.params: Optional[ModelParams] = None

    def update(self, params: ModelParams) -> None:
        if self.params is None:
            self.params = params.copy()
        else:
            current = params.as_dict()
            for name, avg in self.params.as_dict().items():
                avg += (current[name] - avg) / (self.n_averaged + 1)
        self.n_averaged += 1


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    train_loss: float
    kg_loss: float
    synth_loss: float
    synth_count: int
    synth_skipped: int
    positives: int
    negatives_scored: int
    lr: float
    swa_averaged: bool
    batch_losses: List[float] = field(default_factory=list, repr=False)

    def row(self) -> dict:
        return {
            "epoch": self.epoch, "phase": self.phase, "train_loss": self.train_loss,
            "kg_loss": self.kg_loss, "synth_loss": self.synth_loss, "synth_count": self.synth_count,
            "synth_skipped": self.synth_skipped, "positives": self.positives,
            "negatives_scored": self.negatives_scored, "lr": self.lr, "swa_averaged": int(self.swa_averaged),
        }


@dataclass
class RunReport:
    method: str
    e_thresh: int
    expected_synth_per_epoch: int
    initial_loss: float = float("nan")
    epochs: List[EpochRecord] = field(default_factory=list)
    swa_epochs: int = 0

    @property
    def final_loss(self) -> float:
        return self.epochs[-1].train_loss if self.epochs else float("nan")

    def rows(self) -> List[dict]:
        return [record.row() for record in self.epochs]


@dataclass
class TrainResult:
    params: ModelParams
    swa_params: Optional[ModelParams]
    report: RunReport


EpochCallback = Callable[[int, ModelParams, EpochRecord], None]


def epoch_lr(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate for 0-based `epoch`: decayed per epoch, constant swa_lr once SWA starts."""
    if cfg.swa_enabled and epoch >= cfg.swa_start_epoch:
        return cfg.swa_lr
    return cfg.lr * cfg.lr_decay ** epoch


def train(g: KnowledgeGraph, idx: DegreeIndex, cfg: TrainConfig,
          epoch_callback: Optional[EpochCallback] = None, progress: bool = False) -> TrainResult:
    """
    Runs the configured method for cfg.epochs epochs. For kg_mixup the first
    effective_pretrain_epochs epochs are standard training, after which the
    non-embedding parameters are re-initialised and mixing starts.
    """
    if not g.inverse_augmented:
        raise DataError("training expects an inverse-augmented graph")
    if not len(g.train):
        raise DataError("training split is empty")

    streams = {p: RngStream(cfg.seed, p)
               for p in ("init", "negatives", "mixup", "dropout", "dropout-mix", "data-order")}
    params = ModelParams.initialize(cfg.model_kind, g.n_entities, g.n_relations,
                                    cfg.entity_dim, cfg.relation_dim, streams["init"], cfg.init_std)
    adam = AdamState(lr=cfg.lr)
    loss_cfg = cfg.loss_config()
    synth_loss_cfg = LossConfig(label_smoothing=cfg.label_smoothing)
    dropout = DropoutConfig(cfg.dropout_input, cfg.dropout_hidden1, cfg.dropout_hidden2, streams["dropout"])
    # synthetic pass draws its own masks
    synth_dropout = DropoutConfig(cfg.dropout_input, cfg.dropout_hidden1, cfg.dropout_hidden2,
                                  streams["dropout-mix"])

    train_triples = np.asarray(g.train)
    degrees = idx.tail_relation_degrees(train_triples)
    below = degrees < cfg.degree_threshold
    row_weights = (reweight_weights(degrees, cfg.degree_threshold, cfg.reweight_cap)
                   if cfg.method == "reweight" else np.ones(len(train_triples)))
    base_order = (oversample_order(degrees, cfg.degree_threshold)
                  if cfg.method == "oversample" else np.arange(len(train_triples)))

    e_thresh = int(below.sum())
    report = RunReport(method=cfg.method, e_thresh=e_thresh,
                       expected_synth_per_epoch=cfg.synth_per_triple * e_thresh if cfg.method == "kg_mixup" else 0)
    pretrain = cfg.effective_pretrain_epochs
    swa = SWAAverager() if cfg.swa_enabled else None
    n_neg = cfg.negatives

    logger.info(f"Training {cfg.model_kind}/{cfg.method}: {len(train_triples)} triples, "
                f"|E_thresh|={e_thresh}, epochs={cfg.epochs}, pretrain={pretrain}")

    for epoch in trange(cfg.epochs, disable=not progress, desc=f"{cfg.method}"):
        mixing = cfg.method == "kg_mixup" and epoch >= pretrain
        if cfg.method == "kg_mixup" and epoch == pretrain and pretrain > 0:
            if params.reinitialize_core(streams["init"], cfg.init_std):
                adam.reset("core")
                logger.info(f"Pre-training done after {pretrain} epochs; core tensor re-initialised")
        lr = epoch_lr(cfg, epoch)
        adam.lr = lr

        order = base_order[streams["data-order"].permutation(len(base_order))]
        kg_sum = synth_sum = 0.0
        n_batches = synth_count = synth_skipped = 0
        batch_losses: List[float] = []

        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            rows = order[start:start + cfg.batch_size]
            positives = train_triples[rows]
            neg_tails = sample_negative_tails(streams["negatives"], positives[:, 2], n_neg, g.n_entities)
            tails = np.concatenate([positives[:, 2:3], neg_tails], axis=1)
            targets = np.zeros(tails.shape)
            targets[:, 0] = 1.0
            batch = Batch.from_triples(positives, tails, targets, row_weights[rows])

            loss, grads = loss_and_grad(params, batch, loss_cfg, dropout)
            if epoch == 0 and b == 0:
                report.initial_loss = loss
            total = loss
            if mixing:
                synth, count, skipped = _synthetic_rows(positives, below[rows], idx, cfg, streams["mixup"])
                synth_count += count
                synth_skipped += skipped
                if synth is not None:
                    synth_loss, synth_grads = loss_and_grad(params, synth, synth_loss_cfg, synth_dropout)
                    synth_sum += synth_loss
                    total = loss + cfg.synth_loss_weight * synth_loss
                    if cfg.synth_loss_weight > 0:
                        for name, g_mix in synth_grads.items():
                            grads[name] += cfg.synth_loss_weight * g_mix

            if not np.isfinite(total):
                raise DivergenceError(epoch + 1, b + 1, total)
            adam_step(adam, params.as_dict(), grads)
            kg_sum += loss
            batch_losses.append(total)
            n_batches += 1

        averaged = swa is not None and epoch >= cfg.swa_start_epoch
        if averaged:
            swa.update(params)
        record = EpochRecord(
            epoch=epoch + 1,
            phase="mixup" if mixing else ("pretrain" if cfg.method == "kg_mixup" else "train"),
            train_loss=float(np.mean(batch_losses)),
            kg_loss=kg_sum / n_batches,
            synth_loss=synth_sum / n_batches if mixing else 0.0,
            synth_count=synth_count,
            synth_skipped=synth_skipped,
            positives=len(order),
            negatives_scored=len(order) * n_neg,
            lr=lr,
            swa_averaged=averaged,
            batch_losses=batch_losses,
        )
        report.epochs.append(record)
        logger.debug(f"epoch {record.epoch}: loss={record.train_loss:.5f} synth={synth_count} lr={lr:g}")
        if epoch_callback:
            epoch_callback(epoch, params, record)

    if synth_skipped_total := sum(r.synth_skipped for r in report.epochs):
        logger.warning(f"{synth_skipped_total} low-degree triples had no mixing partner")
    report.swa_epochs = swa.n_averaged if swa else 0
    logger.info(f"Finished: initial loss {report.initial_loss:.5f}, final loss {report.final_loss:.5f}")
    return TrainResult(params=params, swa_params=swa.params if swa and swa.n_averaged else None, report=report)
