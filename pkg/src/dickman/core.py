"""Samplers and certificates for the generalized Dickman families.

``D_theta`` is the fixed point of ``W -> U**(1/theta) * (W + 1)`` and
``D_{theta,s}`` the fixed point of ``W -> s^{-1}(U**(1/theta) * s(W + 1))``.
Both are approximated by iterating the map from ``W_0 = 0``; every batch
carries the Wasserstein-1 certificate of its depth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import rng as _rng
from .errors import ContractError, DomainError
from .numerics import adaptive_simpson, adaptive_simpson_pieces
from .utilities import Identity, PowerMixture, Tabulated, UtilitySpec

__all__ = [
    "DickmanSpec",
    "RhoResult",
    "SampleBatch",
    "bias_transform_sample",
    "certified_d1_dtheta",
    "ContractionResult",
    "coupled_contraction",
    "depth_for_epsilon",
    "dtheta_mean",
    "dtheta_second_moment",
    "dtheta_variance",
    "expected_inverse",
    "rho_bound",
    "sample_dtheta",
    "sample_dtheta_path",
    "sample_dtheta_s",
]


@dataclass(frozen=True)
class DickmanSpec:
    """A member of the (theta, s)-Dickman family."""

    theta: float
    utility: UtilitySpec = field(default_factory=Identity)

    def __post_init__(self):
        if not (self.theta > 0 and math.isfinite(self.theta)):
            raise ContractError("theta must be a positive finite number")

    @property
    def contraction(self) -> float:
        return self.theta / (self.theta + 1.0)


@dataclass(frozen=True)
class SampleBatch:
    """Immutable vector of nonnegative samples plus provenance.

    Attributes:
        values: read-only float64 array.
        seed: seed of the generating streams.
        depth_n: recursion depth (or sum length for non-recursive samplers).
        certified_d1: Wasserstein-1 bound to the target law, recursion batches only.
        label: short description of the generating operation.
    """

    values: np.ndarray
    seed: int
    depth_n: int
    certified_d1: Optional[float] = None
    label: str = ""

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, copy=True)
        if v.ndim != 1:
            raise ContractError("sample values must be one-dimensional")
        if np.any(v < 0) or np.any(~np.isfinite(v)):
            raise ContractError("sample values must be finite and nonnegative")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size

    def mean(self) -> float:
        return float(np.mean(self.values))

    def stderr(self) -> float:
        n = self.values.size
        return float(np.std(self.values, ddof=1) / math.sqrt(n)) if n > 1 else math.inf


def _check_counts(depth_n: int, num_samples: int) -> None:
    if depth_n < 0 or num_samples < 0:
        raise ContractError("depth and sample count must be >= 0")


def _concat(parts: list[np.ndarray]) -> np.ndarray:
    return np.concatenate(parts) if parts else np.zeros(0)


def dtheta_mean(theta: float) -> float:
    return float(theta)


def dtheta_second_moment(theta: float) -> float:
    # E D^2 = E V^2 E(D+1)^2 with E V^2 = theta/(theta+2)
    return theta * (2.0 * theta + 1.0) / 2.0


def dtheta_variance(theta: float) -> float:
    return theta / 2.0


def certified_d1_dtheta(theta: float, depth_n: int) -> float:
    """Wasserstein-1 bound ``theta * (theta/(theta+1))**n`` for depth ``n``."""
    return theta * (theta / (theta + 1.0)) ** depth_n


def depth_for_epsilon(theta: float, epsilon: float) -> int:
    """Least depth whose certificate ``theta*(theta/(theta+1))**n`` is <= epsilon."""
    if not theta > 0 or not epsilon > 0:
        raise ContractError("theta and epsilon must be positive")
    n = max(0, math.ceil(math.log(theta / epsilon) / math.log((theta + 1.0) / theta)))
    # guard the float rounding of the closed form
    while certified_d1_dtheta(theta, n) > epsilon:
        n += 1
    while n > 0 and certified_d1_dtheta(theta, n - 1) <= epsilon:
        n -= 1
    return n


def _power(u: np.ndarray, theta: float) -> np.ndarray:
    return u if theta == 1.0 else u ** (1.0 / theta)


def sample_dtheta(
    theta: float,
    depth_n: int,
    num_samples: int,
    seed: int,
    threads: Optional[int] = None,
) -> SampleBatch:
    """Run ``W_{k+1} = U_k**(1/theta) (W_k + 1)`` from ``W_0 = 0`` for ``depth_n`` steps."""
    return _recursion_batch(theta, depth_n, num_samples, seed, threads, "recursion")


def _recursion_batch(theta, depth_n, num_samples, seed, threads, op) -> SampleBatch:
    DickmanSpec(theta)
    _check_counts(depth_n, num_samples)

    def chunk(g: np.random.Generator, size: int) -> np.ndarray:
        w = np.zeros(size)
        for _ in range(depth_n):
            w += 1.0
            w *= _power(_rng.uniform01c(g, size), theta)
        return w

    vals = _concat(_rng.map_chunks(chunk, num_samples, seed, op, threads))
    return SampleBatch(vals, seed, depth_n, certified_d1_dtheta(theta, depth_n), "dtheta")


def sample_dtheta_path(
    theta: float,
    depths: Sequence[int],
    num_samples: int,
    seed: int,
    threads: Optional[int] = None,
) -> dict[int, SampleBatch]:
    """Depth-``n`` batches for several depths, all built from one set of uniforms.

    Uses the backward representation ``Y_n = sum_{k=1}^n V_1 ... V_k`` with
    ``V_j = U_j**(1/theta)``, which has the law of the depth-``n`` recursion.
    ``Y_n`` is nondecreasing in ``n`` sample by sample, so the batches are
    monotonically coupled and ``Y_m - Y_n`` isolates the depth effect.
    """
    DickmanSpec(theta)
    wanted = sorted(set(int(d) for d in depths))
    if not wanted or wanted[0] < 0:
        raise ContractError("depths must be a nonempty list of counts >= 0")
    _check_counts(0, num_samples)
    top = wanted[-1]

    def chunk(g: np.random.Generator, size: int) -> list[np.ndarray]:
        y = np.zeros(size)
        prod = np.ones(size)
        out = []
        it = iter(wanted)
        nxt = next(it)
        for k in range(top + 1):
            while nxt == k:
                out.append(y.copy())
                nxt = next(it, None)
            if k == top:
                break
            prod *= _power(_rng.uniform01c(g, size), theta)
            y += prod
        return out

    parts = _rng.map_chunks(chunk, num_samples, seed, "path", threads)
    res = {}
    for i, d in enumerate(wanted):
        vals = _concat([p[i] for p in parts])
        res[d] = SampleBatch(vals, seed, d, certified_d1_dtheta(theta, d), "dtheta-path")
    return res


def bias_transform_sample(spec: DickmanSpec, w, u):
    """Apply the (theta, s) bias transform ``s^{-1}(u**(1/theta) s(w + 1))``."""
    w_arr = np.asarray(w, dtype=np.float64)
    u_arr = np.asarray(u, dtype=np.float64)
    if np.any(w_arr < 0):
        raise DomainError("w must be >= 0")
    if np.any(u_arr <= 0) or np.any(u_arr > 1):
        raise DomainError("u must lie in (0, 1]")
    s = spec.utility
    v = _power(u_arr, spec.theta)
    if isinstance(s, Identity):
        out = v * (w_arr + 1.0)
    else:
        z = np.asarray(s.eval(w_arr + 1.0)) * v
        out = np.minimum(np.asarray(s.inverse_saturating(z)), w_arr + 1.0)
    return float(out) if np.ndim(out) == 0 else out


def expected_inverse(spec: DickmanSpec, tol: float = 1e-10) -> float:
    """``E[s^{-1}(U**(1/theta))] = 1 - int_0^1 s(x)**theta dx``.

    ``s^{-1}(U**(1/theta))`` has distribution function ``s(x)**theta`` on [0, 1].
    """
    s = spec.utility
    th = spec.theta
    if isinstance(s, Identity):
        return th / (th + 1.0)
    val = adaptive_simpson(lambda x: np.asarray(s.eval(x)) ** th, 0.0, 1.0, tol=tol, split=1e-3)
    return 1.0 - val


@dataclass(frozen=True)
class RhoResult:
    """Contraction constant of the averaging operator.

    ``rho`` is the certified value when ``certified`` is true, otherwise the
    (uncertified) supremum of ``I`` over the grid.
    """

    rho: float
    certified: bool
    grid_sup: float
    argmax: float
    tag: str

    def __iter__(self):
        yield self.rho
        yield self.certified


def _i_on_grid(spec: DickmanSpec, x: np.ndarray, x0: float = 0.0, base: float = 0.0):
    """``I(x) = theta s'(x) int_0^x s^theta / s(x)^(theta+1)`` on increasing ``x``.

    ``base`` is the integral up to ``x0 < x[0]``.
    """
    s = spec.utility
    th = spec.theta

    def integrand(v):
        return np.asarray(s.eval(v)) ** th

    edges = np.concatenate([[x0], x])
    pieces = adaptive_simpson_pieces(integrand, edges, tol=1e-13, rtol=1e-11)
    cum = base + np.cumsum(pieces)
    sx = np.asarray(s.eval(x))
    return th * np.asarray(s.deriv(x)) * cum / sx ** (th + 1.0), cum


def rho_bound(
    spec: DickmanSpec,
    grid: Optional[np.ndarray] = None,
    x_max: float = 50.0,
    num_points: int = 4096,
) -> RhoResult:
    """Bound the sup-norm of ``I`` (the contraction constant rho).

    The supremum of ``I`` is taken on a geometric grid over ``(1e-8, x_max]``
    refined around its argmax.  Concave utilities are certified at
    ``theta/(theta+1)``; power mixtures with exponents in ``(0, a]`` at
    ``theta = 1`` are certified at ``a/(a+1)``.  A non-concave tabulated
    utility gets the uncertified grid supremum.
    """
    s = spec.utility
    th = spec.theta
    generic = th / (th + 1.0)
    if isinstance(s, Identity):
        return RhoResult(generic, True, generic, math.nan, "identity:closed-form")
    if isinstance(s, Tabulated):
        x_max = min(x_max, s.x_max)
    if grid is None:
        grid = np.geomspace(1e-8, x_max, num_points)
    x = np.asarray(grid, dtype=np.float64)
    if x.ndim != 1 or x.size < 2 or np.any(np.diff(x) <= 0) or x[0] <= 0:
        raise ContractError("rho grid must be strictly increasing and positive")
    vals, cum = _i_on_grid(spec, x)
    j = int(np.nanargmax(vals))
    sup, arg = float(vals[j]), float(x[j])
    # refine between the neighbours of the argmax
    lo = max(j - 1, 0)
    hi = min(j + 1, x.size - 1)
    base = 0.0 if lo == 0 else float(cum[lo - 1])
    x0 = 0.0 if lo == 0 else float(x[lo - 1])
    fine = np.linspace(x[lo], x[hi], 257)
    fv, _ = _i_on_grid(spec, fine, x0, base)
    k = int(np.nanargmax(fv))
    if fv[k] > sup:
        sup, arg = float(fv[k]), float(fine[k])

    if not s.concave:
        return RhoResult(sup, False, sup, arg, "uncertified:grid-sup")
    if isinstance(s, PowerMixture) and th == 1.0:
        a = s.support_max
        return RhoResult(a / (a + 1.0), True, sup, arg, "power-mixture:a/(a+1)")
    return RhoResult(generic, True, sup, arg, "concave:theta/(theta+1)")


def sample_dtheta_s(
    spec: DickmanSpec,
    depth_n: int,
    num_samples: int,
    seed: int,
    threads: Optional[int] = None,
) -> SampleBatch:
    """Run ``W_{k+1} = s^{-1}(U_k**(1/theta) s(W_k + 1))`` from ``W_0 = 0``.

    Shares its random streams with :func:`sample_dtheta`, so the identity
    utility reproduces that sampler value for value.  The certificate is
    ``(1-rho)^{-1} (theta/(theta+1))**n E[s^{-1}(U**(1/theta))]`` and is
    omitted when rho is not certified.
    """
    _check_counts(depth_n, num_samples)
    s = spec.utility
    if isinstance(s, Identity):
        b = sample_dtheta(spec.theta, depth_n, num_samples, seed, threads)
        return SampleBatch(b.values, seed, depth_n, b.certified_d1, "dtheta-s")
    rho = rho_bound(spec)
    cert = None
    if rho.certified and rho.rho < 1.0:
        cert = spec.contraction**depth_n * expected_inverse(spec) / (1.0 - rho.rho)
    th = spec.theta

    def chunk(g: np.random.Generator, size: int) -> np.ndarray:
        w = np.zeros(size)
        for _ in range(depth_n):
            v = _power(_rng.uniform01c(g, size), th)
            w = np.minimum(np.asarray(s.inverse_saturating(v * np.asarray(s.eval(w + 1.0)))), w + 1.0)
        return w

    vals = _concat(_rng.map_chunks(chunk, num_samples, seed, "recursion", threads))
    return SampleBatch(vals, seed, depth_n, cert, "dtheta-s")


@dataclass(frozen=True)
class ContractionResult:
    """Per-step mean distances of two coupled chains and their ratios."""

    means: np.ndarray
    stderrs: np.ndarray
    ratios: np.ndarray
    ratio_stderrs: np.ndarray


def coupled_contraction(
    spec: DickmanSpec,
    max_depth: int,
    num_samples: int,
    seed: int,
) -> ContractionResult:
    """Mean ``|s(A_k) - s(B_k)|`` for two chains sharing their uniforms.

    ``A`` starts at 0 and ``B`` one recursion step further, so ``A_k`` has
    the depth-``k`` law and ``B_k`` the depth-``k+1`` law.  Reports the means
    for ``k = 0..max_depth``, the step ratios ``mean_{k+1}/mean_k`` and
    delta-method standard errors.
    """
    _check_counts(max_depth, num_samples)
    if num_samples < 2:
        raise ContractError("need at least two samples")
    s = spec.utility
    th = spec.theta

    def step(w, v):
        if isinstance(s, Identity):
            return v * (w + 1.0)
        return np.minimum(np.asarray(s.inverse_saturating(v * np.asarray(s.eval(w + 1.0)))), w + 1.0)

    def chunk(g: np.random.Generator, size: int) -> np.ndarray:
        a = np.zeros(size)
        b = step(a, _power(_rng.uniform01c(g, size), th))
        out = np.zeros((max_depth + 1, 3))
        prev = None
        for k in range(max_depth + 1):
            d = np.abs(np.asarray(s.eval(a)) - np.asarray(s.eval(b)))
            out[k, 0] = d.sum()
            out[k, 1] = (d * d).sum()
            if prev is not None:
                out[k - 1, 2] = (prev * d).sum()
            prev = d
            if k < max_depth:
                v = _power(_rng.uniform01c(g, size), th)
                a, b = step(a, v), step(b, v)
        return out

    tot = np.sum(_rng.map_chunks(chunk, num_samples, seed, "contraction"), axis=0) / num_samples
    m, m2, cross = tot[:, 0], tot[:, 1], tot[:, 2]
    corr = num_samples / (num_samples - 1)
    se = np.sqrt(np.maximum(m2 - m * m, 0.0) * corr / num_samples)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = m[1:] / m[:-1]
        # z = (d_{k+1} - r d_k) / mean_k has mean zero
        ez2 = (m2[1:] - 2 * r * cross[:-1] + r * r * m2[:-1]) / m[:-1] ** 2
    rse = np.sqrt(np.maximum(ez2, 0.0) * corr / num_samples)
    return ContractionResult(m, se, r, rse)
