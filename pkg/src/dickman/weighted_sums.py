"""Weighted Bernoulli and Poisson sums that approach the Dickman laws.

``W_n = (1/n) sum_{k<=n} Y_k B_k`` with ``B_k ~ Ber(1/k)`` tends to ``D_1``
and ``W_n = (1/n) sum_{k<=n} Y_k P_k`` with ``P_k ~ Poi(theta/k)`` tends to
``D_theta``, where ``E Y_k = k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import rng as _rng
from .core import SampleBatch, _concat
from .errors import ContractError

__all__ = [
    "BernoulliMarks",
    "Deterministic",
    "PoissonMarks",
    "ScaledGamma",
    "SumSpec",
    "exact_mean",
    "poisson_inversion",
    "sample_record_sum",
    "sample_weighted_sum",
    "theoretical_bound",
]


@dataclass(frozen=True)
class Deterministic:
    """``Y_k = k`` almost surely."""

    tag = "deterministic"

    def variances(self, k: np.ndarray) -> np.ndarray:
        return np.zeros_like(k, dtype=np.float64)


@dataclass(frozen=True)
class ScaledGamma:
    """``Y_k = k G_k`` with ``G_k`` gamma, mean 1 and variance ``v / k**eps``.

    Gives ``Var Y_k = v k**(2 - eps)``.
    """

    v: float
    eps: float = 1.0

    def __post_init__(self):
        if self.v < 0 or not math.isfinite(self.v):
            raise ContractError("weight variance scale must be >= 0")
        if not math.isfinite(self.eps):
            raise ContractError("eps must be finite")

    @property
    def tag(self) -> str:
        return f"gamma(v={self.v!r},eps={self.eps!r})"

    def variances(self, k: np.ndarray) -> np.ndarray:
        k = np.asarray(k, dtype=np.float64)
        return self.v * k ** (2.0 - self.eps)

    def draw(self, g: np.random.Generator, k: np.ndarray) -> np.ndarray:
        k = np.asarray(k, dtype=np.float64)
        if self.v == 0:
            return k
        rel = self.v / k**self.eps
        return k * g.gamma(1.0 / rel, rel)


WeightLaw = Union[Deterministic, ScaledGamma]


@dataclass(frozen=True)
class BernoulliMarks:
    """``B_k ~ Ber(1/k)``."""

    tag = "bernoulli"
    theta = 1.0


@dataclass(frozen=True)
class PoissonMarks:
    """``P_k ~ Poi(theta/k)``."""

    theta: float = 1.0

    def __post_init__(self):
        if not (self.theta > 0 and math.isfinite(self.theta)):
            raise ContractError("Poisson marks need theta > 0")

    @property
    def tag(self) -> str:
        return f"poisson(theta={self.theta!r})"


@dataclass(frozen=True)
class SumSpec:
    n: int
    marks: Union[BernoulliMarks, PoissonMarks] = field(default_factory=BernoulliMarks)
    weights: WeightLaw = field(default_factory=Deterministic)

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ContractError("n must be an integer >= 1")


def exact_mean(spec: SumSpec) -> float:
    """``E W_n``: 1 for Bernoulli marks, theta for Poisson marks."""
    return float(spec.marks.theta)


def theoretical_bound(spec: SumSpec) -> float:
    """The smooth-metric bound for the weighted sum.

    Bernoulli marks: ``3/(4n) + (1/(2n^2)) sum_k sqrt((s_k^2 + k^2) s_k^2)/k``.
    Poisson marks:   ``theta/(4n) + (theta/n) sum_k s_k/k
                     + (theta/(2n^2)) sum_k sqrt((s_k^2 + k^2) s_k^2)/k``.
    """
    n = int(spec.n)
    k = np.arange(1, n + 1, dtype=np.float64)
    var = spec.weights.variances(k)
    tail = math.fsum(np.sqrt((var + k * k) * var) / k)
    if isinstance(spec.marks, BernoulliMarks):
        return 3.0 / (4.0 * n) + tail / (2.0 * n * n)
    th = spec.marks.theta
    return th / (4.0 * n) + th / n * math.fsum(np.sqrt(var) / k) + th * tail / (2.0 * n * n)


def poisson_inversion(g: np.random.Generator, lam: float, size: int) -> np.ndarray:
    """Poisson(lam) draws by sequential CDF inversion, one uniform per draw.

    Means above 500 are split into equal parts to keep ``exp(-lam)`` normal.
    """
    if lam < 0:
        raise ContractError("Poisson mean must be >= 0")
    parts = max(1, math.ceil(lam / 500.0))
    lam_p = lam / parts
    total = np.zeros(size, dtype=np.int64)
    for _ in range(parts):
        u = g.random(size)
        k = np.zeros(size, dtype=np.int64)
        p = math.exp(-lam_p)
        cdf = np.full(size, p)
        live = np.flatnonzero(u >= cdf)
        j = 0
        while live.size:
            j += 1
            p *= lam_p / j
            if p == 0.0:
                break
            cdf[live] += p
            k[live] = j
            live = live[u[live] >= cdf[live]]
        total += k
    return total


def _bernoulli_chunk(spec: SumSpec):
    n = int(spec.n)
    w = spec.weights

    def chunk(g: np.random.Generator, size: int) -> np.ndarray:
        acc = np.zeros(size)
        cur = np.ones(size, dtype=np.int64)  # B_1 = 1
        live = np.arange(size)
        while live.size:
            k = cur[live]
            acc[live] += k if isinstance(w, Deterministic) else w.draw(g, k)
            # next success after j: P(M > m) = j/m, so M = floor(j/U) + 1
            u = _rng.uniform01c(g, live.size)
            nxt = np.floor(k / u) + 1.0
            keep = nxt <= n
            live = live[keep]
            cur[live] = nxt[keep].astype(np.int64)
        return acc / n

    return chunk


def _poisson_chunk(spec: SumSpec):
    n = int(spec.n)
    th = spec.marks.theta
    w = spec.weights
    cum_h = np.cumsum(1.0 / np.arange(1, n + 1, dtype=np.float64))
    h_n = float(cum_h[-1])

    def chunk(g: np.random.Generator, size: int) -> np.ndarray:
        # superposition: sum_k P_k points, each at index k with prob (1/k)/H_n
        counts = poisson_inversion(g, th * h_n, size)
        owner = np.repeat(np.arange(size), counts)
        u = _rng.uniform01c(g, owner.size) * h_n
        idx = np.minimum(np.searchsorted(cum_h, u, side="left"), n - 1) + 1
        if isinstance(w, Deterministic):
            tot = np.bincount(owner, weights=idx.astype(np.float64), minlength=size)
        else:
            # points at the same (sample, k) share one weight Y_k
            key = owner.astype(np.int64) * (n + 1) + idx
            uniq, mult = np.unique(key, return_counts=True)
            y = w.draw(g, uniq % (n + 1))
            tot = np.bincount(uniq // (n + 1), weights=y * mult, minlength=size)
        return tot / n

    return chunk


def sample_weighted_sum(
    spec: SumSpec,
    num_samples: int,
    seed: int,
    threads: Optional[int] = None,
) -> SampleBatch:
    """Independent draws of the weighted Bernoulli or Poisson sum ``W_n``."""
    if num_samples < 0:
        raise ContractError("num_samples must be >= 0")
    if isinstance(spec.marks, BernoulliMarks):
        fn, op = _bernoulli_chunk(spec), "bernoulli-sum"
    else:
        fn, op = _poisson_chunk(spec), "poisson-sum"
    vals = _concat(_rng.map_chunks(fn, num_samples, seed, op, threads))
    return SampleBatch(vals, seed, int(spec.n), None, f"{spec.marks.tag}/{spec.weights.tag}")


def sample_record_sum(
    n: int,
    num_samples: int,
    seed: int,
    threads: Optional[int] = None,
) -> SampleBatch:
    """Scaled sum of lower-record times among ``n`` i.i.d. uniform heights.

    Time ``j`` is a record when its height is below all earlier ones; the
    first time is always a record.  Returns ``(1/n) sum of record times``.
    """
    if int(n) != n or n < 1 or num_samples < 0:
        raise ContractError("need n >= 1 and num_samples >= 0")
    n = int(n)
    rows = max(1, (1 << 22) // n)
    times = np.arange(1, n + 1, dtype=np.float64)

    def chunk(g: np.random.Generator, size: int) -> np.ndarray:
        out = np.empty(size)
        for start in range(0, size, rows):
            m = min(rows, size - start)
            h = g.random((m, n))
            prev = np.minimum.accumulate(h, axis=1)
            rec = np.ones((m, n), dtype=bool)
            rec[:, 1:] = h[:, 1:] < prev[:, :-1]
            out[start : start + m] = rec @ times
        return out / n

    vals = _concat(_rng.map_chunks(chunk, num_samples, seed, "record-sum", threads))
    return SampleBatch(vals, seed, n, None, "record-sum")
