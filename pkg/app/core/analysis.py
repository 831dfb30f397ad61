"""
Post-training analysis.

- Expected calibration error over degree bins (or confidence quantiles)
- Mean embedding distances between low-degree triples and their same-tail neighbours
- First-order expansion check of the loss of a mixed triple, and the two
  regularisation terms that expansion yields
"""
import math
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import expit

from ..models import config
from ..models.schemas import BinSpec, degree_bins
from .evaluator import RankResult, assign_bins
from .graph import DegreeIndex, Triple
from .numerics import RngStream, beta_samples
from .scoring import ModelParams, score, score_partials
from .trainer import draw_partners

logger = logging.getLogger(__name__)


@dataclass
class CalibrationBin:
    label: str
    count: int
    accuracy: float
    confidence: float

    @property
    def ece(self) -> float:
        return abs(self.accuracy - self.confidence)


@dataclass
class CalibrationReport:
    n: int
    ece: float
    bins: List[CalibrationBin]

    def bin(self, label: str) -> Optional[CalibrationBin]:
        return next((b for b in self.bins if b.label == label), None)

    def rows(self) -> List[dict]:
        rows = [{"bin": b.label, "count": b.count, "accuracy": b.accuracy, "confidence": b.confidence,
                 "ece": b.ece} for b in self.bins]
        rows.append({"bin": "all", "count": self.n, "accuracy": "", "confidence": "", "ece": self.ece})
        return rows


def _calibration(hits: np.ndarray, confidences: np.ndarray, assignment: np.ndarray,
                 labels: Sequence[str]) -> CalibrationReport:
    hits = np.asarray(hits, dtype=np.float64)
    confidences = np.asarray(confidences, dtype=np.float64)
    if hits.shape != confidences.shape:
        raise ValueError("hits and confidences must align")
    if np.any((confidences < 0) | (confidences > 1)) or np.any(np.isnan(confidences)):
        raise ValueError("confidences must lie in [0, 1]")
    n = len(hits)
    bins: List[CalibrationBin] = []
    total = 0.0
    for i, label in enumerate(labels):
        mask = assignment == i
        count = int(mask.sum())
        if not count:
            continue
        b = CalibrationBin(label, count, float(hits[mask].mean()), float(confidences[mask].mean()))
        bins.append(b)
        total += count / n * b.ece
    return CalibrationReport(n=n, ece=total, bins=bins)


def ece(hits, confidences, degrees, bins: Optional[BinSpec] = None) -> CalibrationReport:
    """
    ECE = sum_m |B_m| / n * |acc(B_m) - conf(B_m)| with samples binned by
    tail-relation degree. Empty bins carry no weight.
    """
    bins = bins or degree_bins()
    labels = [bins.label(i) for i in range(len(bins.edges) - 1)]
    return _calibration(hits, confidences, assign_bins(degrees, bins), labels)


def ece_by_confidence(hits, confidences, n_bins: int = 10) -> CalibrationReport:
    """Same measure with equal-count bins over sorted confidence."""
    confidences = np.asarray(confidences, dtype=np.float64)
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    order = np.argsort(confidences, kind="stable")
    assignment = np.empty(len(confidences), dtype=np.int64)
    for i, chunk in enumerate(np.array_split(order, n_bins)):
        assignment[chunk] = i
    return _calibration(hits, confidences, assignment, [f"q{i + 1}" for i in range(n_bins)])


def ece_from_results(results: List[RankResult], bins: Optional[BinSpec] = None, k: int = 10,
                     quantiles: Optional[int] = None) -> CalibrationReport:
    """A query counts as correct when its filtered rank is <= k."""
    hits = np.array([r.rank <= k for r in results], dtype=np.float64)
    conf = np.array([r.confidence for r in results], dtype=np.float64)
    if quantiles:
        return ece_by_confidence(hits, conf, quantiles)
    return ece(hits, conf, np.array([r.degree for r in results]), bins)


@dataclass
class DistanceReport:
    d_head: float
    d_rel: float
    n_thresh: int
    threshold: float

    @property
    def empty(self) -> bool:
        return self.n_thresh == 0

    def rows(self) -> List[dict]:
        return [{"threshold": self.threshold, "n_thresh": self.n_thresh,
                 "d_head": self.d_head, "d_rel": self.d_rel}]


def embedding_distances(params: ModelParams, idx: DegreeIndex, threshold: float) -> DistanceReport:
    """
    For each training triple with d_tail(t, r) < threshold, the mean L2
    distance from its head (relation) to the heads (relations) of every
    training triple with tail t, the triple itself included.
    """
    low = idx.triples[idx.below_threshold(threshold)]
    if not len(low):
        logger.warning(f"No training triples below degree threshold {threshold}; nothing to analyze")
        return DistanceReport(float("nan"), float("nan"), 0, threshold)

    head_sum = rel_sum = 0.0
    for t in np.unique(low[:, 2]):
        mine = low[low[:, 2] == t]
        rows = idx.by_tail(int(t))
        head_sum += cdist(params.entity[mine[:, 0]], params.entity[rows[:, 0]]).mean(axis=1).sum()
        rel_sum += cdist(params.relation[mine[:, 1]], params.relation[rows[:, 1]]).mean(axis=1).sum()
    n = len(low)
    logger.info(f"Embedding distances over {n} low-degree triples (threshold {threshold})")
    return DistanceReport(head_sum / n, rel_sum / n, n, threshold)


def _nll(f: float) -> float:
    """BCE of a positive at logit f: -log sigma(f)."""
    return float(np.logaddexp(0.0, -f))


def _mixed_score(params: ModelParams, e_i: Triple, e_j: Triple, tau: float) -> float:
    h = params.entity[e_i.head] + tau * (params.entity[e_j.head] - params.entity[e_i.head])
    r = params.relation[e_i.relation] + tau * (params.relation[e_j.relation] - params.relation[e_i.relation])
    return score(params, h, r, params.entity[e_i.tail])


@dataclass
class TaylorCheckReport:
    e_i: Triple
    e_j: Triple
    taus: List[float]
    l0: float
    losses: List[float]
    derivative: float
    stated_derivative: float
    fd_derivative: float
    residuals: List[float]
    stated_residuals: List[float]
    head_term: float
    rel_term: float
    delta_h_norm: float
    delta_r_norm: float
    ratios: List[float] = field(default_factory=list)
    fd_tolerance: float = 1e-4

    @property
    def fd_relative_error(self) -> float:
        scale = max(abs(self.derivative), abs(self.fd_derivative), 1e-12)
        return abs(self.derivative - self.fd_derivative) / scale

    @property
    def degenerate(self) -> bool:
        return self.delta_h_norm == 0.0 and self.delta_r_norm == 0.0

    @property
    def passed(self) -> bool:
        if self.degenerate:
            return self.derivative == 0.0 and all(r == 0.0 for r in self.residuals)
        return self.fd_relative_error <= self.fd_tolerance

    def rows(self) -> List[dict]:
        rows = []
        for i, tau in enumerate(self.taus):
            rows.append({
                "tau": tau, "loss": self.losses[i], "residual": self.residuals[i],
                "stated_sign_residual": self.stated_residuals[i],
                "ratio_to_half_tau": self.ratios[i] if i < len(self.ratios) else "",
            })
        return rows


def taylor_check(params: ModelParams, e_i, e_j, taus: Sequence[float], fd_step: float = 1e-6) -> TaylorCheckReport:
    """
    Compares l(tau), the positive-label BCE of e_i mixed with e_j at amount
    tau = 1 - lambda, against its first-order expansion at 0.

    `derivative` is dl/dtau for l = -log sigma(f), i.e.
    -(1 - sigma(f(e_i))) * (df/dh . dh + df/dr . dr). `stated_derivative` is the
    same expression without the leading minus; both residual series are
    reported, only the first is expected to decay quadratically. Each
    `taus` entry also gets the ratio residual(tau) / residual(tau / 2).
    """
    e_i, e_j = Triple(*(int(x) for x in e_i)), Triple(*(int(x) for x in e_j))
    if e_i.tail != e_j.tail:
        raise ValueError(f"cannot mix triples with different tails: {e_i} / {e_j}")
    x_h, x_r = params.entity[e_i.head], params.relation[e_i.relation]
    x_t = params.entity[e_i.tail]
    delta_h = params.entity[e_j.head] - x_h
    delta_r = params.relation[e_j.relation] - x_r

    f0 = score(params, x_h, x_r, x_t)
    dh, dr, _ = score_partials(params, x_h, x_r, x_t)
    weight = float(expit(-f0))
    head_term = weight * float(dh @ delta_h)
    rel_term = weight * float(dr @ delta_r)
    stated = head_term + rel_term
    derivative = -stated

    l0 = _nll(f0)
    fd = (_nll(_mixed_score(params, e_i, e_j, fd_step)) - _nll(_mixed_score(params, e_i, e_j, -fd_step))) / (2 * fd_step)

    taus = [float(t) for t in taus]
    losses, residuals, stated_residuals, ratios = [], [], [], []
    for tau in taus:
        loss = _nll(_mixed_score(params, e_i, e_j, tau))
        losses.append(loss)
        residuals.append(abs(loss - l0 - tau * derivative))
        stated_residuals.append(abs(loss - l0 - tau * stated))
        half = abs(_nll(_mixed_score(params, e_i, e_j, tau / 2)) - l0 - tau / 2 * derivative)
        ratios.append(residuals[-1] / half if half > 0 else float("nan"))

    return TaylorCheckReport(
        e_i=e_i, e_j=e_j, taus=taus, l0=l0, losses=losses,
        derivative=derivative, stated_derivative=stated, fd_derivative=fd,
        residuals=residuals, stated_residuals=stated_residuals,
        head_term=head_term, rel_term=rel_term,
        delta_h_norm=float(np.linalg.norm(delta_h)), delta_r_norm=float(np.linalg.norm(delta_r)),
        ratios=ratios,
    )


def residual_decay_ratio(reports: List[TaylorCheckReport], tau_index: int = 0) -> float:
    """mean residual(tau) / mean residual(tau / 2) over a set of checks."""
    full = [r.residuals[tau_index] for r in reports if not r.degenerate]
    half = [r.residuals[tau_index] / r.ratios[tau_index] for r in reports
            if not r.degenerate and r.ratios[tau_index] == r.ratios[tau_index] and r.ratios[tau_index] > 0]
    if not full or not half:
        return float("nan")
    return float(np.mean(full) / np.mean(half))


def estimate_tau(alpha: float, stream: RngStream, draws: int = config.TAU_DRAWS) -> float:
    """E[1 - lambda] for lambda from Beta(alpha, alpha) folded onto [1/2, 1]."""
    return float(np.mean(1.0 - beta_samples(stream, alpha, draws, folded=True)))


@dataclass
class RegularizerReport:
    r1: float
    r2: float
    tau: float
    n_triples: int
    n_pairs: int

    @property
    def empty(self) -> bool:
        return self.n_triples == 0

    def rows(self) -> List[dict]:
        return [{"r1": self.r1, "r2": self.r2, "tau": self.tau,
                 "n_triples": self.n_triples, "n_pairs": self.n_pairs}]


def regularizer_terms(params: ModelParams, triples: np.ndarray, idx: DegreeIndex, k: int, alpha: float,
                      stream: RngStream, mode: str = "strict_fallback",
                      tau: Optional[float] = None) -> RegularizerReport:
    """
    R1 = tau / |S| * sum_i sum_j (1 - sigma(f(e_i))) df(e_i)/dh . (x_hj - x_hi), R2 likewise
    over relations, with k same-tail partners j drawn per triple of S.
    """
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if tau is None:
        tau = estimate_tau(alpha, stream)
    if not len(triples):
        logger.warning("Empty triple set; regularisation terms are zero")
        return RegularizerReport(0.0, 0.0, tau, 0, 0)

    sum_h = sum_r = 0.0
    n_pairs = 0
    for e in triples:
        h, r, t = (int(x) for x in e)
        x_h, x_r, x_t = params.entity[h], params.relation[r], params.entity[t]
        weight = float(expit(-score(params, x_h, x_r, x_t)))
        partners = draw_partners(e, idx, k, stream, mode)
        if not len(partners) or weight == 0.0:
            continue
        dh, dr, _ = score_partials(params, x_h, x_r, x_t)
        delta_h = (params.entity[partners[:, 0]] - x_h).sum(axis=0)
        delta_r = (params.relation[partners[:, 1]] - x_r).sum(axis=0)
        sum_h += weight * float(dh @ delta_h)
        sum_r += weight * float(dr @ delta_r)
        n_pairs += len(partners)
    n = len(triples)
    if not math.isfinite(sum_h) or not math.isfinite(sum_r):
        logger.warning("Non-finite regularisation estimate")
    return RegularizerReport(tau * sum_h / n, tau * sum_r / n, tau, n, n_pairs)
