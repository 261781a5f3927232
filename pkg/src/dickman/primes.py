"""Prime tables and the prime-indexed sums ``S_n = sum_k X_k log p_k / log p_n``.

Covers the exact means, the size-bias index couplings ``(T_n, U)``, the
remainder of the geometric size-bias identity and a binary table cache.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import rng as _rng
from .core import SampleBatch
from .errors import ContractError, ResourceError
from .numerics import compensated_cumsum, compensated_sum
from .report import BoundReport, zscore_verdict
from .witnesses import Witness, half_lipschitz_dictionary

__all__ = [
    "BernoulliPrime",
    "CouplingResult",
    "EULER_GAMMA",
    "GeometricPrime",
    "PoissonInvPrime",
    "PoissonLogRatio",
    "PrimeTable",
    "RemainderResult",
    "build_prime_table",
    "coupling_TU",
    "coupling_l1_exact",
    "first_primes",
    "load_prime_table",
    "mu_n",
    "prime_table",
    "remainder_term",
    "sample_prime_sum",
    "save_prime_table",
    "size_bias_check",
    "size_bias_enumerate",
]

EULER_GAMMA = 0.5772156649015329
BLOCK = 1_000_000
DEFAULT_MEMORY_BUDGET = 2 << 30
_BYTES_PER_PRIME = 64  # primes, logs, two cumulative sums, two breakpoint arrays

MAGIC = b"DKPT"
VERSION = 1


def _prime_limit(n: int) -> int:
    """Upper bound for the n-th prime (Rosser-type, valid for n >= 6)."""
    if n < 6:
        return 15
    ln = math.log(n)
    return int(n * (ln + math.log(ln))) + 10


def _small_primes(limit: int) -> np.ndarray:
    sieve = np.ones(limit + 1, dtype=bool)
    sieve[:2] = False
    for p in range(2, int(math.isqrt(limit)) + 1):
        if sieve[p]:
            sieve[p * p :: p] = False
    return np.flatnonzero(sieve)


def first_primes(n: int, block: int = BLOCK) -> np.ndarray:
    """The first ``n`` primes by a segmented, odd-only sieve of Eratosthenes."""
    if n < 1:
        raise ContractError("need n >= 1")
    limit = _prime_limit(n)
    base = _small_primes(math.isqrt(limit) + 1)
    base = base[base > 2]
    found = [np.array([2], dtype=np.int64)]
    count = 1
    lo = 3
    half = block // 2
    while count < n and lo <= limit:
        # odd numbers lo, lo+2, ..., lo + 2*(half-1)
        hi = lo + 2 * half
        odd = np.ones(half, dtype=bool)
        for p in base:
            p = int(p)
            pp = p * p
            if pp >= hi:
                break
            start = max(pp, (lo + p - 1) // p * p)
            if start % 2 == 0:
                start += p
            odd[(start - lo) // 2 :: p] = False
        new = lo + 2 * np.flatnonzero(odd).astype(np.int64)
        found.append(new)
        count += new.size
        lo = hi
    primes = np.concatenate(found)
    if primes.size < n:
        raise RuntimeError("prime limit estimate too small")
    return primes[:n]


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class PrimeTable:
    """First ``n`` primes with the cumulative sums the prime-sum laws need.

    Attributes:
        primes: p_1 .. p_n (int64).
        logs: log p_k.
        cum_geom: running sum of log p_k / (p_k - 1).
        cum_bern: running sum of log p_k / (p_k + 1).
        mu_geometric, mu_bernoulli: exact means of S_n for the geometric and
            Bernoulli marks.
        F: breakpoints F_0..F_n of the geometric index law.
    """

    primes: np.ndarray
    logs: np.ndarray = field(repr=False)
    cum_geom: np.ndarray = field(repr=False)
    cum_bern: np.ndarray = field(repr=False)
    mu_geometric: float
    mu_bernoulli: float
    F: np.ndarray = field(repr=False)
    F_bern: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return int(self.primes.size)

    @property
    def log_pn(self) -> float:
        return float(self.logs[-1])

    @classmethod
    def from_primes(cls, primes) -> "PrimeTable":
        p = np.asarray(primes, dtype=np.int64).copy()
        if p.ndim != 1 or p.size < 1 or p[0] != 2 or np.any(np.diff(p) <= 0):
            raise ContractError("primes must start at 2 and increase strictly")
        pf = p.astype(np.float64)
        logs = np.log(pf)
        cg = compensated_cumsum(logs / (pf - 1.0))
        cb = compensated_cumsum(logs / (pf + 1.0))
        L = float(logs[-1])

        def brk(c: np.ndarray) -> np.ndarray:
            f = np.empty(c.size + 1)
            f[0] = 0.0
            f[1:] = c / c[-1]
            f[-1] = 1.0
            return _readonly(f)

        return cls(
            _readonly(p),
            _readonly(logs),
            _readonly(cg),
            _readonly(cb),
            float(cg[-1] / L),
            float(cb[-1] / L),
            brk(cg),
            brk(cb),
        )

    def truncate(self, m: int) -> "PrimeTable":
        if not 1 <= m <= self.n:
            raise ContractError("truncation length out of range")
        return PrimeTable.from_primes(self.primes[:m])


def build_prime_table(n: int, memory_budget: int = DEFAULT_MEMORY_BUDGET) -> PrimeTable:
    """Sieve the first ``n`` primes and precompute cumulative fields."""
    if int(n) != n or n < 1:
        raise ContractError("need an integer n >= 1")
    need = _BYTES_PER_PRIME * int(n) + BLOCK
    if need > memory_budget:
        raise ResourceError(f"{n} primes need about {need} bytes, budget is {memory_budget}")
    return PrimeTable.from_primes(first_primes(int(n)))


def save_prime_table(table: PrimeTable, path: str) -> None:
    """Write ``DKPT | u32 version | u64 n | n x u64 primes | f64 mu_geom | f64 mu_bern``."""
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<IQ", VERSION, table.n))
        fh.write(table.primes.astype("<u8").tobytes())
        fh.write(struct.pack("<dd", table.mu_geometric, table.mu_bernoulli))


def load_prime_table(path: str) -> PrimeTable:
    """Read a cache file, recompute the cumulative fields and check the stored means."""
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) != 16 or head[:4] != MAGIC:
            raise ContractError(f"{path}: not a prime-table cache")
        version, n = struct.unpack("<IQ", head[4:])
        if version != VERSION:
            raise ContractError(f"{path}: unsupported cache version {version}")
        raw = fh.read(8 * n)
        trailer = fh.read(16)
    if len(raw) != 8 * n or len(trailer) != 16:
        raise ContractError(f"{path}: truncated cache")
    table = PrimeTable.from_primes(np.frombuffer(raw, dtype="<u8").astype(np.int64))
    mg, mb = struct.unpack("<dd", trailer)
    if abs(mg - table.mu_geometric) > 1e-12 or abs(mb - table.mu_bernoulli) > 1e-12:
        raise ContractError(f"{path}: stored means do not match the primes")
    return table


def prime_table(n: int, cache: Optional[str] = None) -> PrimeTable:
    """Table for ``n`` primes, reusing (and refreshing) a cache file if given."""
    if cache and os.path.exists(cache):
        t = load_prime_table(cache)
        if t.n >= n:
            return t if t.n == n else t.truncate(n)
    t = build_prime_table(n)
    if cache:
        save_prime_table(t, cache)
    return t


# mark laws


@dataclass(frozen=True)
class GeometricPrime:
    """``X_k ~ Geom(1 - 1/p_k)`` on {0, 1, ...}: ``P(X = m) = p_k**-m (1 - 1/p_k)``."""

    tag = "geometric"


@dataclass(frozen=True)
class BernoulliPrime:
    """``X_k ~ Ber(1/(1 + p_k))``."""

    tag = "bernoulli"


@dataclass(frozen=True)
class PoissonInvPrime:
    """``X_k ~ Poi(1/(1 + p_k))``."""

    tag = "poisson-inv"


@dataclass(frozen=True)
class PoissonLogRatio:
    """``X_k ~ Poi(1 - log p_{k-1} / log p_k)`` with ``p_0 = 1``."""

    tag = "poisson-logratio"


MarkLaw = Union[GeometricPrime, BernoulliPrime, PoissonInvPrime, PoissonLogRatio]
MARK_LAWS = {m.tag: m for m in (GeometricPrime, BernoulliPrime, PoissonInvPrime, PoissonLogRatio)}


def _poisson_rates(table: PrimeTable, marks: MarkLaw) -> np.ndarray:
    if isinstance(marks, PoissonInvPrime):
        return 1.0 / (table.primes.astype(np.float64) + 1.0)
    prev = np.concatenate([[0.0], table.logs[:-1]])
    return 1.0 - prev / table.logs


def mu_n(table: PrimeTable, marks: MarkLaw) -> float:
    """Exact mean of ``S_n``."""
    if isinstance(marks, GeometricPrime):
        return table.mu_geometric
    if isinstance(marks, (BernoulliPrime, PoissonInvPrime)):
        return table.mu_bernoulli
    if isinstance(marks, PoissonLogRatio):
        return 1.0  # the rates telescope
    raise ContractError(f"unknown mark law {marks!r}")


def breakpoints(table: PrimeTable, marks: MarkLaw) -> np.ndarray:
    """``F_0..F_n`` of the size-bias index law ``P(I = k) ~ E[X_k] log p_k``."""
    if isinstance(marks, GeometricPrime):
        return table.F
    if isinstance(marks, (BernoulliPrime, PoissonInvPrime)):
        return table.F_bern
    f = np.concatenate([[0.0], table.logs / table.log_pn])
    f[-1] = 1.0
    return f


def _hazards(table: PrimeTable, marks: MarkLaw) -> np.ndarray:
    """``-log P(X_k = 0)`` for each k."""
    p = table.primes.astype(np.float64)
    if isinstance(marks, GeometricPrime):
        return -np.log1p(-1.0 / p)
    if isinstance(marks, BernoulliPrime):
        return -np.log1p(-1.0 / (p + 1.0))
    return _poisson_rates(table, marks)


def _truncated_poisson(g: np.random.Generator, lam: np.ndarray) -> np.ndarray:
    """Poisson(lam) conditioned on >= 1, by CDF inversion."""
    u = g.random(lam.size)
    p = lam * np.exp(-lam) / -np.expm1(-lam)
    cdf = p.copy()
    k = np.ones(lam.size, dtype=np.int64)
    live = np.flatnonzero(u >= cdf)
    j = 1
    while live.size:
        j += 1
        p[live] *= lam[live] / j
        cdf[live] += p[live]
        k[live] = j
        live = live[(u[live] >= cdf[live]) & (p[live] > 0)]
    return k


class _Sparse:
    """Nonzero marks of a batch, stored as sorted (sample, k) keys."""

    def __init__(self, n: int, keys: np.ndarray, xs: np.ndarray):
        order = np.argsort(keys, kind="stable")
        self.n = n
        self.keys = keys[order]
        self.xs = xs[order]

    def probe(self, owner: np.ndarray, k: np.ndarray) -> np.ndarray:
        """``X_k`` of each listed sample (0 when absent)."""
        q = owner.astype(np.int64) * (self.n + 1) + k
        pos = np.searchsorted(self.keys, q)
        pos_c = np.minimum(pos, max(self.keys.size - 1, 0))
        hit = (pos < self.keys.size) & (self.keys[pos_c] == q) if self.keys.size else np.zeros(q.size, bool)
        return np.where(hit, self.xs[pos_c] if self.keys.size else 0, 0)


def _draw_sums(table: PrimeTable, marks: MarkLaw, g: np.random.Generator, size: int, keep: bool):
    """Sample ``S_n`` by jumping between the indices with ``X_k >= 1``.

    With cumulative hazard ``H``, the next nonzero index after ``j`` is the
    first ``m`` with ``H_m >= H_j + E``, ``E`` standard exponential.
    """
    n = table.n
    cum = np.concatenate([[0.0], compensated_cumsum(_hazards(table, marks))])
    rates = None if isinstance(marks, (GeometricPrime, BernoulliPrime)) else _poisson_rates(table, marks)
    acc = np.zeros(size)
    pos = np.zeros(size, dtype=np.int64)
    live = np.arange(size)
    keys, vals = [], []
    while live.size:
        e = -np.log(_rng.uniform01c(g, live.size))
        nxt = np.searchsorted(cum, cum[pos[live]] + e, side="left")
        ok = nxt <= n
        live, nxt = live[ok], nxt[ok]
        if not live.size:
            break
        if isinstance(marks, GeometricPrime):
            v = _rng.uniform01c(g, live.size)
            x = 1 + np.floor(-np.log(v) / table.logs[nxt - 1]).astype(np.int64)
        elif isinstance(marks, BernoulliPrime):
            x = np.ones(live.size, dtype=np.int64)
        else:
            x = _truncated_poisson(g, rates[nxt - 1])
        acc[live] += x * table.logs[nxt - 1]
        pos[live] = nxt
        if keep:
            keys.append(live.astype(np.int64) * (n + 1) + nxt)
            vals.append(x)
    s = acc / table.log_pn
    if not keep:
        return s, None
    k = np.concatenate(keys) if keys else np.zeros(0, dtype=np.int64)
    x = np.concatenate(vals) if vals else np.zeros(0, dtype=np.int64)
    return s, _Sparse(n, k, x)


def sample_prime_sum(
    table: PrimeTable,
    marks: MarkLaw,
    num_samples: int,
    seed: int,
    threads: Optional[int] = None,
) -> SampleBatch:
    """Independent draws of ``S_n = sum_k X_k log p_k / log p_n``."""
    if num_samples < 0:
        raise ContractError("num_samples must be >= 0")
    parts = _rng.map_chunks(lambda g, m: _draw_sums(table, marks, g, m, False)[0], num_samples, seed, "prime-sum", threads)
    vals = np.concatenate(parts) if parts else np.zeros(0)
    return SampleBatch(vals, seed, table.n, None, f"prime-{marks.tag}")


def _draw_index(table: PrimeTable, marks: MarkLaw, u: np.ndarray) -> np.ndarray:
    """``I = j`` iff ``F_{j-1} <= u < F_j``."""
    f = breakpoints(table, marks)
    return np.clip(np.searchsorted(f, u, side="right"), 1, table.n)


@dataclass(frozen=True)
class CouplingResult:
    T: np.ndarray
    U: np.ndarray
    mean_abs: float
    stderr: float


def coupling_TU(
    table: PrimeTable,
    marks: MarkLaw,
    num_samples: int,
    seed: int,
) -> CouplingResult:
    """Couple ``T_n`` with a uniform ``U`` through the size-bias index ``I(U)``.

    ``T = log p_I / log p_n``; for Bernoulli marks the term ``X_I log p_I /
    log p_n`` is subtracted with ``X_I ~ Ber(1/(1+p_I))`` drawn fresh.
    """
    if num_samples < 1:
        raise ContractError("num_samples must be >= 1")

    def chunk(g: np.random.Generator, m: int):
        u = g.random(m)
        i = _draw_index(table, marks, u)
        t = table.logs[i - 1] / table.log_pn
        if isinstance(marks, BernoulliPrime):
            x = g.random(m) < 1.0 / (table.primes[i - 1] + 1.0)
            t = np.where(x, 0.0, t)
        return t, u

    parts = _rng.map_chunks(chunk, num_samples, seed, "coupling")
    t = np.concatenate([p[0] for p in parts])
    u = np.concatenate([p[1] for p in parts])
    d = np.abs(t - u)
    return CouplingResult(t, u, float(d.mean()), float(d.std(ddof=1) / math.sqrt(d.size)) if d.size > 1 else math.inf)


def coupling_l1_exact(table: PrimeTable, marks: MarkLaw) -> float:
    """``E|T - U|`` of the index coupling, integrated exactly cell by cell."""
    f = breakpoints(table, marks)
    a, b = f[:-1], f[1:]
    t = table.logs / table.log_pn

    def cell(c):
        # int_a^b |c - u| du
        lo = np.clip(c, a, b)
        return ((lo - a) * (2 * c - a - lo) + (b - lo) * (b + lo - 2 * c)) / 2.0

    if isinstance(marks, BernoulliPrime):
        q = 1.0 / (table.primes.astype(np.float64) + 1.0)
        return compensated_sum((1 - q) * cell(t) + q * cell(np.zeros_like(t)))
    return compensated_sum(cell(t))


@dataclass(frozen=True)
class RemainderResult:
    estimate: float
    stderr: float
    envelope: float


def remainder_envelope(table: PrimeTable) -> float:
    p = table.primes.astype(np.float64)
    return compensated_sum(table.logs**2 / (p - 1.0) ** 2) / (2.0 * table.log_pn**2)


def remainder_term(
    table: PrimeTable,
    phi: Callable[[np.ndarray], np.ndarray],
    num_samples: int,
    seed: int,
) -> RemainderResult:
    """Monte Carlo estimate of the geometric size-bias remainder.

    ``R = (1/L) sum_k log p_k/(p_k - 1) E[X_k (phi(S + l_k) - phi(S))]`` with
    ``l_k = log p_k / L``, ``L = log p_n``.  Sampling ``k`` from the index law
    turns the sum into ``mu_n E[X_I (phi(S + l_I) - phi(S))]``.
    """
    marks = GeometricPrime()
    mu = table.mu_geometric

    def chunk(g: np.random.Generator, m: int):
        s, sp = _draw_sums(table, marks, g, m, True)
        i = _draw_index(table, marks, g.random(m))
        x = sp.probe(np.arange(m), i)
        z = mu * x * (phi(s + table.logs[i - 1] / table.log_pn) - phi(s))
        return z.sum(), (z * z).sum()

    parts = _rng.map_chunks(chunk, num_samples, seed, "remainder")
    tot = np.sum(parts, axis=0)
    mean = tot[0] / num_samples
    var = max(tot[1] / num_samples - mean * mean, 0.0) * num_samples / max(num_samples - 1, 1)
    return RemainderResult(float(mean), math.sqrt(var / num_samples), remainder_envelope(table))


def _size_bias_terms(table: PrimeTable, marks: MarkLaw, phis: Sequence[Witness], seed: int, num_samples: int):
    """Per-phi (mean, second moment) sums of both sides of the identity.

    The left side ``S phi(S)`` and the right side ``mu phi(S + T)`` (plus
    the remainder for geometric marks) use independent batches.
    """
    mu = mu_n(table, marks)

    def lhs(g: np.random.Generator, m: int):
        s, _ = _draw_sums(table, marks, g, m, False)
        z = np.stack([s * w(s) for w in phis])
        return np.stack([z.sum(1), (z * z).sum(1)])

    def rhs(g: np.random.Generator, m: int):
        s, sp = _draw_sums(table, marks, g, m, True)
        i = _draw_index(table, marks, g.random(m))
        ell = table.logs[i - 1] / table.log_pn
        x = sp.probe(np.arange(m), i)
        if isinstance(marks, BernoulliPrime):
            t = ell - x * ell
        else:
            t = ell
        rows = []
        for w in phis:
            z = mu * w(s + t)
            if isinstance(marks, GeometricPrime):
                z = z + mu * x * (w(s + ell) - w(s))
            rows.append(z)
        z = np.stack(rows)
        return np.stack([z.sum(1), (z * z).sum(1)])

    out = []
    for fn, op in ((lhs, "prime-sum"), (rhs, "size-bias")):
        tot = np.sum(_rng.map_chunks(fn, num_samples, seed, op), axis=0)
        mean = tot[0] / num_samples
        var = np.maximum(tot[1] / num_samples - mean**2, 0.0) * num_samples / max(num_samples - 1, 1)
        out.append((mean, np.sqrt(var / num_samples)))
    return out


def size_bias_check(
    table: PrimeTable,
    marks: MarkLaw,
    num_samples: int,
    seed: int,
    phis: Optional[Sequence[Witness]] = None,
) -> BoundReport:
    """Check ``E[S phi(S)] = mu E[phi(S + T)] + R_phi`` over a phi dictionary.

    ``R_phi`` is included for geometric marks and is zero otherwise.  The
    verdict passes when every gap is within 5 combined standard errors.
    """
    if num_samples < 2:
        raise ContractError("need at least two samples")
    phis = list(phis) if phis is not None else half_lipschitz_dictionary()
    (lm, ls), (rm, rs) = _size_bias_terms(table, marks, phis, seed, num_samples)
    gaps = lm - rm
    ses = np.sqrt(ls**2 + rs**2)
    j = int(np.argmax(np.abs(gaps) / np.maximum(ses, 1e-300)))
    per_phi = {w.name: {"lhs": float(lm[i]), "rhs": float(rm[i]), "stderr": float(ses[i])} for i, w in enumerate(phis)}
    return BoundReport(
        f"size-bias-{marks.tag}",
        0.0,
        float(abs(gaps[j])),
        float(ses[j]),
        int(num_samples),
        zscore_verdict(gaps, ses),
        {"n": table.n, "mu_n": mu_n(table, marks), "per_phi": per_phi},
    )


def size_bias_enumerate(table: PrimeTable, phi: Callable[[np.ndarray], np.ndarray]) -> tuple[float, float]:
    """Both sides of the Bernoulli size-bias identity by exhaustive enumeration.

    Sums over all ``2**n`` mark vectors and all index cells, so it is meant
    for ``n <= 16``.
    """
    n = table.n
    if n > 16:
        raise ContractError("enumeration is limited to n <= 16")
    q = 1.0 / (table.primes.astype(np.float64) + 1.0)
    ell = table.logs / table.log_pn
    f = table.F_bern
    pi = np.diff(f)
    mu = table.mu_bernoulli
    lhs, rhs = [], []
    for mask in range(1 << n):
        x = np.array([(mask >> k) & 1 for k in range(n)], dtype=np.float64)
        prob = float(np.prod(np.where(x == 1, q, 1 - q)))
        s = float(np.dot(x, ell))
        lhs.append(prob * s * float(phi(np.array(s))))
        # size-biasing sets X_I to 1
        t = ell - x * ell
        rhs.append(prob * mu * compensated_sum(pi * phi(s + t)))
    return compensated_sum(lhs), compensated_sum(rhs)
