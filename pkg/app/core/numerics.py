"""
Numerical building blocks.

- Seeded random streams keyed by (seed, purpose), with per-worker derivation
- Beta(alpha, alpha) sampling from two Gamma draws, optionally folded onto [1/2, 1]
- Adam with bias-corrected moments over named float64 arrays
- Central finite differences (gradient oracle)
- Student t p-values for paired comparisons
"""
import math
import hashlib
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Optional

import numpy as np
from scipy import stats
from scipy.special import expit

from ..models import config
from .errors import NumericalError

logger = logging.getLogger(__name__)

Params = Dict[str, np.ndarray]

PURPOSES = ("init", "negatives", "mixup", "dropout", "dropout-mix", "data-order", "analysis", "bench")


def _purpose_key(purpose: str) -> int:
    digest = hashlib.sha256(purpose.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


@dataclass
class RngStream:
    """
    Single-owner random stream. Streams with different (seed, purpose)
    are independent; the same pair always reproduces the same sequence.
    """
    seed: int
    purpose: str
    worker: Optional[int] = None
    counter: int = 0
    _gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        spawn_key = (_purpose_key(self.purpose),) if self.worker is None else (_purpose_key(self.purpose), self.worker + 1)
        seq = np.random.SeedSequence(entropy=int(self.seed) & (2 ** 64 - 1), spawn_key=spawn_key)
        self._gen = np.random.Generator(np.random.PCG64(seq))

    def derive(self, worker: int) -> "RngStream":
        """Independent stream for one parallel worker."""
        return RngStream(self.seed, self.purpose, worker=worker)

    def random(self, size=None):
        self.counter += 1
        return self._gen.random(size)

    def integers(self, low: int, high: int, size=None):
        self.counter += 1
        return self._gen.integers(low, high, size=size)

    def normal(self, scale: float, size):
        self.counter += 1
        return self._gen.normal(0.0, scale, size=size)

    def standard_gamma(self, shape: float, size=None):
        self.counter += 1
        return self._gen.standard_gamma(shape, size=size)

    def permutation(self, n: int) -> np.ndarray:
        self.counter += 1
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = True) -> np.ndarray:
        self.counter += 1
        return self._gen.choice(n, size=size, replace=replace)


def beta_samples(stream: RngStream, alpha: float, size: int, folded: bool = False) -> np.ndarray:
    """Draws from Beta(alpha, alpha) as X / (X + Y) with X, Y ~ Gamma(alpha)."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    x = stream.standard_gamma(alpha, size)
    y = stream.standard_gamma(alpha, size)
    total = x + y
    underflow = total <= 0
    lam = x / np.where(underflow, 1.0, total)
    if np.any(underflow):
        # Both gammas underflow for tiny alpha; the limit law is a fair coin on {0, 1}
        lam[underflow] = (stream.random(int(underflow.sum())) < 0.5).astype(float)
    if folded:
        lam = np.maximum(lam, 1.0 - lam)
    return lam


def beta_sample(stream: RngStream, alpha: float, folded: bool = False) -> float:
    return float(beta_samples(stream, alpha, 1, folded)[0])


def sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


@dataclass
class AdamState:
    lr: float
    beta1: float = config.ADAM_BETA1
    beta2: float = config.ADAM_BETA2
    eps: float = config.ADAM_EPS
    step_count: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def reset(self, name: str) -> None:
        """Drops the moments of one parameter (used when it is re-initialised)."""
        self.m.pop(name, None)
        self.v.pop(name, None)


def adam_step(state: AdamState, params: Params, grads: Params) -> Params:
    """
    One Adam update, in place. The step counter is incremented before the
    bias corrections are computed.
    """
    for name, g in grads.items():
        if name not in params:
            raise ValueError(f"gradient for unknown parameter '{name}'")
        if g.shape != params[name].shape:
            raise ValueError(f"shape mismatch for '{name}': param {params[name].shape}, grad {g.shape}")

    state.step_count += 1
    bc1 = 1.0 - state.beta1 ** state.step_count
    bc2 = 1.0 - state.beta2 ** state.step_count

    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        params[name] -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params


def finite_diff_grad(f: Callable[[Params], float], params: Params, h: float = 1e-5,
                     names: Optional[Iterable[str]] = None) -> Params:
    """Central differences (f(x+h) - f(x-h)) / 2h for every coordinate."""
    if not h > 0:
        raise ValueError("step h must be positive")
    grads: Params = {}
    for name in (names if names is not None else list(params)):
        x = params[name]
        g = np.zeros_like(x, dtype=np.float64)
        flat = x.reshape(-1)
        g_flat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = f(params)
            flat[i] = orig - h
            f_minus = f(params)
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericalError(f"non-finite objective while differencing '{name}'[{i}]")
            g_flat[i] = (f_plus - f_minus) / (2.0 * h)
        grads[name] = g
    return grads


def t_two_sided_p(t: float, df: int) -> float:
    """Two-sided p-value of a Student t statistic with `df` degrees of freedom."""
    if df < 1:
        raise ValueError("df must be >= 1")
    if math.isinf(t):
        return 0.0
    return min(1.0, float(2.0 * stats.t.sf(abs(t), df)))
