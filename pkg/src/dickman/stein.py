"""Stein-equation solver for the (theta, s)-Dickman laws.

With ``t = s**theta`` the averaging operator is
``A_x h = (1/t(x)) int_0^x h(v) t'(v) dv``.  The solution of
``g(x) - A_{x+1} g = h(x) - E h(D)`` is the series ``g = sum_k h^{*k}`` with
``h^{*(k+1)}(x) = A_{x+1} h^{*k}``, and ``f(x) = A_x g`` solves
``(t/t')(x) f'(x) + f(x) - f(x+1) = h(x) - E h(D)``.

Everything is computed on a uniform grid of step ``1/m`` (``m`` nodes per
unit), so the shift ``x -> x + 1`` is exactly ``m`` nodes.  Cumulative
Stieltjes integrals use cubic Lagrange interpolation on each cell.
Derivatives come from the exact relation ``(A_y phi)' = r(y)(phi(y) - A_y phi)``
with ``r = t'/t``, never from finite differences.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Union

import numpy as np

from .core import DickmanSpec, rho_bound
from .errors import CertificationError, ContractError, DomainError
from .numerics import adaptive_simpson
from .utilities import Identity
from .witnesses import Witness

__all__ = [
    "SteinSolution",
    "average_derivatives",
    "averaging_operator",
    "centering_constant",
    "counterexample_curvature",
    "counterexample_check",
    "iterate_averages",
    "solve_stein",
    "truncation_depth",
]

NODES_PER_UNIT = 512
_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


def _basis(nodes) -> np.ndarray:
    """Monomial coefficients (rows) of the Lagrange basis (columns) on ``nodes``."""
    p = np.asarray(nodes, dtype=np.float64)
    return np.linalg.inv(np.vander(p, increasing=True))


_STD = (-1.0, 0.0, 1.0, 2.0)  # cell [0, 1] interpolated from nodes i-1..i+2
_FIRST = (0.0, 1.0, 2.0, 3.0)
_END = (-2.0, -1.0, 0.0, 1.0)


def _basis_at(nodes, xi: np.ndarray) -> np.ndarray:
    c = _basis(nodes)  # c[i, m]
    return np.vander(xi, 4, increasing=True) @ c  # (len(xi), 4)


class _Stieltjes:
    """Cumulative integrals ``C[i] = int_0^{x_i} phi dt`` on a uniform grid.

    ``phi`` is given by its node values; each cell integrates the cubic
    through four neighbouring nodes against ``t'``.  Weights are built
    once and reused for every iterate.
    """

    def __init__(
        self,
        step: float,
        n_cells: int,
        t: Callable[[np.ndarray], np.ndarray],
        tprime: Callable[[np.ndarray], np.ndarray],
        power: Optional[tuple[float, float]] = None,
    ):
        if n_cells < 4:
            raise ContractError("grid too short")
        self.step = step
        self.n_cells = n_cells
        x0 = np.arange(n_cells, dtype=np.float64) * step
        pts = x0[:, None] + step * _GL_X[None, :]
        tp = np.asarray(tprime(pts.ravel())).reshape(pts.shape) * _GL_W[None, :] * step
        self.w_std = tp @ _basis_at(_STD, _GL_X)
        self.w_end = tp @ _basis_at(_END, _GL_X)
        first = tp[0] @ _basis_at(_FIRST, _GL_X)
        # first cell holds the possible singularity of t' at 0
        c = _basis(_FIRST)
        if power is not None:
            # t(v) = a v**p exactly: int_0^h xi^i d(a (h xi)^p) = a h^p p / (p + i)
            a, p = power
            mom = a * step**p * p / (p + np.arange(4))
            first = mom @ c
        else:
            # integrate by parts: L(h) t(h) - int_0^h L'(v) t(v) dv
            th = float(np.asarray(t(np.array([step])))[0])
            for m in range(4):
                coef = c[:, m]
                dcoef = coef[1:] * np.arange(1, 4)

                def integrand(v, dcoef=dcoef):
                    xi = v / step
                    return np.polyval(dcoef[::-1], xi) / step * np.asarray(t(v))

                first[m] = coef.sum() * th - adaptive_simpson(integrand, 0.0, step, tol=1e-16, rtol=1e-13)
        self.w_std[0] = first
        self.w_end[0] = first
        self.w_end[1] = first  # unused: prefixes are at least 4 nodes
        denom = np.concatenate([[0.0], np.cumsum(self.w_std.sum(axis=1))])
        self.denom = denom

    def cumulative(self, phi: np.ndarray) -> np.ndarray:
        """``C[0..L-1]`` for node values ``phi[0..L-1]``, L >= 4."""
        L = phi.size
        if L < 4 or L - 1 > self.n_cells:
            raise ContractError("prefix length out of range")
        ncell = L - 1
        idx = np.arange(ncell - 1)
        j0 = np.maximum(idx - 1, 0)
        stencil = phi[j0[:, None] + np.arange(4)[None, :]]
        contrib = np.empty(ncell)
        contrib[:-1] = np.einsum("ij,ij->i", stencil, self.w_std[: ncell - 1])
        last = ncell - 1
        contrib[-1] = phi[last - 2 : last + 2] @ self.w_end[last] if last >= 2 else phi[:4] @ self.w_std[0]
        return np.concatenate([[0.0], np.cumsum(contrib)])

    def average(self, phi: np.ndarray) -> np.ndarray:
        """``A_{x_i} phi`` for every node of the prefix (``A_0 phi = phi(0)``)."""
        c = self.cumulative(phi)
        out = np.empty_like(c)
        out[0] = phi[0]
        out[1:] = c[1:] / self.denom[1 : c.size]
        return out


def _tfuncs(spec: DickmanSpec):
    """``t``, ``t'``, ``r = t'/t`` and ``r'`` for the spec."""
    s = spec.utility
    th = spec.theta
    if isinstance(s, Identity):
        return (
            lambda v: v**th,
            lambda v: th * v ** (th - 1.0),
            lambda v: th / v,
            lambda v: -th / v**2,
            (1.0, th),
        )

    def t(v):
        return np.asarray(s.eval(v)) ** th

    def tp(v):
        sv = np.asarray(s.eval(v))
        return th * sv ** (th - 1.0) * np.asarray(s.deriv(v))

    def r(v):
        return th * np.asarray(s.deriv(v)) / np.asarray(s.eval(v))

    def rp(v):
        sv = np.asarray(s.eval(v))
        d1 = np.asarray(s.deriv(v)) / sv
        return th * (np.asarray(s.deriv2(v)) / sv - d1 * d1)

    return t, tp, r, rp, None


HFun = Union[Witness, Callable[[np.ndarray], np.ndarray]]


def _as_witness(h: HFun) -> Witness:
    if isinstance(h, Witness):
        return h
    raise ContractError("a Witness (function with derivatives) is required")


def averaging_operator(spec: DickmanSpec, h: Callable[[np.ndarray], np.ndarray], x: float, tol: float = 1e-11) -> float:
    """``A_x h`` by adaptive quadrature after the substitution ``t(v) = w t(x)``.

    ``A_x h = int_0^1 h(s^{-1}(w**(1/theta) s(x))) dw``; constants map to
    themselves exactly.
    """
    x = float(x)
    if x < 0 or math.isnan(x):
        raise DomainError("x must be >= 0")
    if x == 0.0:
        return float(np.asarray(h(np.array([0.0])))[0])
    s = spec.utility
    th = spec.theta
    if isinstance(s, Identity):

        def integrand(w):
            return np.asarray(h(x * w ** (1.0 / th)), dtype=np.float64)

    else:
        sx = float(s.eval(x))

        def integrand(w):
            z = np.minimum(w ** (1.0 / th) * sx, sx)
            return np.asarray(h(np.minimum(np.asarray(s.inverse_saturating(z)), x)), dtype=np.float64)

    return adaptive_simpson(integrand, 0.0, 1.0, tol=tol, split=1e-3)


def average_derivatives(spec: DickmanSpec, h: Witness, y) -> tuple[np.ndarray, np.ndarray]:
    """First and second derivatives of ``x -> A_x h`` at points ``y > 0`` (identity utility).

    Uses ``(A_y h)' = theta/(theta+1) B_y h'`` and
    ``(A_y h)'' = (theta/y)(h'(y) - B_y h')`` where ``B`` averages against
    ``v**(theta+1)``.
    """
    if not isinstance(spec.utility, Identity):
        raise ContractError("closed-form derivative averages need the identity utility")
    th = spec.theta
    ys = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if np.any(ys <= 0):
        raise DomainError("points must be > 0")
    d1 = np.empty(ys.size)
    d2 = np.empty(ys.size)
    for i, yy in enumerate(ys):
        b = adaptive_simpson(lambda w: h.d1(yy * w ** (1.0 / (th + 1.0))), 0.0, 1.0, tol=1e-12, split=1e-3)
        d1[i] = th / (th + 1.0) * b
        d2[i] = th / yy * (float(h.d1(np.array([yy]))[0]) - b)
    return d1, d2


def truncation_depth(mu_hat: float, x_max: float, rho: float, epsilon: float, lip: float = 1.0) -> int:
    """Least ``K`` with ``lip (mu + x_max) rho**(K+1) / (1 - rho) <= epsilon``."""
    if not 0 <= rho < 1:
        raise CertificationError("contraction constant must be < 1")
    if epsilon <= 0:
        raise ContractError("epsilon must be positive")
    c = lip * (mu_hat + x_max) / (1.0 - rho)
    if c <= epsilon or rho == 0.0:
        return 0
    k = max(0, math.ceil(math.log(epsilon / c) / math.log(rho)) - 1)
    while c * rho ** (k + 1) > epsilon:
        k += 1
    while k > 0 and c * rho**k <= epsilon:
        k -= 1
    return k


class _Grid:
    """Uniform node set ``x_i = i / m`` with the operator discretisations."""

    def __init__(self, spec: DickmanSpec, length: float, m: int = NODES_PER_UNIT):
        self.spec = spec
        self.m = m
        self.step = 1.0 / m
        self.n_nodes = int(math.ceil(length * m)) + 1
        self.x = np.arange(self.n_nodes, dtype=np.float64) * self.step
        t, tp, r, rp, power = _tfuncs(spec)
        self.t, self.tp, self.r, self.rp = t, tp, r, rp
        self.op = _Stieltjes(self.step, self.n_nodes - 1, t, tp, power)
        self._op2 = None

    @property
    def op_raised(self) -> _Stieltjes:
        """Averages against ``v**(theta+1)`` (identity utility only)."""
        if self._op2 is None:
            th = self.spec.theta
            self._op2 = _Stieltjes(
                self.step,
                self.n_nodes - 1,
                lambda v: v ** (th + 1.0),
                lambda v: (th + 1.0) * v**th,
                (1.0, th + 1.0),
            )
        return self._op2

    def shift_average(self, phi: np.ndarray) -> np.ndarray:
        """``A_{x+1} phi`` on the nodes where it is defined."""
        c = self.op.cumulative(phi)
        m = self.m
        return c[m:] / self.op.denom[m : c.size]

    def shift_derivative(self, phi: np.ndarray, nxt: np.ndarray) -> np.ndarray:
        """``(A_{x+1} phi)' = r(x+1)(phi(x+1) - A_{x+1} phi)``."""
        m = self.m
        return self.r(self.x[m : m + nxt.size]) * (phi[m : m + nxt.size] - nxt)


def _centering_depth(lip: float, mu: float, rho: float, target: float = 1e-12) -> int:
    return max(1, math.ceil(math.log(target / max(lip * max(mu, 1e-300), 1e-300)) / math.log(rho)))


def _mu_hat(spec: DickmanSpec, rho: float, m: int) -> float:
    """``E[D_{theta,s}]`` from the iterated averages of ``h(x) = x`` at 0."""
    if isinstance(spec.utility, Identity):
        return float(spec.theta)
    k = _centering_depth(1.0, spec.theta + 2.0, rho)
    grid = _Grid(spec, k + 1.0, m)
    cur = grid.x.copy()
    prev = cur[0]
    for _ in range(k):
        prev = cur[0]
        cur = grid.shift_average(cur)
    # geometric convergence: inflate by the remaining tail and quadrature slack
    return float(cur[0] + abs(cur[0] - prev) * rho / (1.0 - rho) + 1e-9)


def centering_constant(spec: DickmanSpec, h: Callable[[np.ndarray], np.ndarray], lip: float = 1.0, m: int = NODES_PER_UNIT) -> float:
    """``E h(D_{theta,s})`` as the limit of ``A_{x+1}^k h`` at ``x = 0``.

    The error after ``k`` steps is at most ``lip * mu * rho**k``; ``k`` is
    chosen to push that below 1e-12.
    """
    rho = _rho(spec)
    mu = _mu_hat(spec, rho, m)
    k = _centering_depth(lip, mu, rho)
    grid = _Grid(spec, k + 1.0, m)
    cur = np.asarray(h(grid.x), dtype=np.float64)
    for _ in range(k):
        cur = grid.shift_average(cur)
    return float(cur[0])


def _rho(spec: DickmanSpec) -> float:
    r = rho_bound(spec)
    if not r.certified or r.rho >= 1.0:
        raise CertificationError("no certified contraction constant below 1; the series is not summable")
    return r.rho


@dataclass(frozen=True)
class IterateResult:
    x: np.ndarray
    iterates: list
    centering: float


def iterate_averages(
    spec: DickmanSpec,
    h: Callable[[np.ndarray], np.ndarray],
    K: int,
    a: float = 5.0,
    center: bool = True,
    lip: float = 1.0,
    m: int = NODES_PER_UNIT,
) -> IterateResult:
    """``h^{*0} .. h^{*K}`` on the nodes of ``[0, a]``.

    With ``center`` the constant ``E h(D)`` (see :func:`centering_constant`)
    is subtracted first.
    """
    if K < 0 or a <= 0:
        raise ContractError("need K >= 0 and a > 0")
    _rho(spec)
    c = centering_constant(spec, h, lip, m) if center else 0.0
    grid = _Grid(spec, a + K + 1.0, m)
    na = int(round(a * m)) + 1
    cur = np.asarray(h(grid.x), dtype=np.float64) - c
    out = [cur[:na].copy()]
    for _ in range(K):
        cur = grid.shift_average(cur)
        out.append(cur[:na].copy())
    return IterateResult(grid.x[:na].copy(), out, c)


@dataclass(frozen=True)
class SteinSolution:
    """Grid solution of the Stein equation with its certificates.

    Attributes:
        grid: nodes on (0, x_max].
        f, f_prime, f_double_prime: solution values on ``grid``.
        K: truncation depth of the series.
        tail_bound: ``lip (mu + x_max) rho**(K+1) / (1 - rho)``.
        residual: Stein-equation residual on ``grid``.
        g, g_prime: truncated series and its derivative on ``grid``.
        g_lipschitz: max difference quotient of the truncated series.
    """

    spec: DickmanSpec
    grid: np.ndarray = field(repr=False)
    f: np.ndarray = field(repr=False)
    f_prime: np.ndarray = field(repr=False)
    f_double_prime: np.ndarray = field(repr=False)
    K: int
    tail_bound: float
    rho: float
    mu_hat: float
    centering: float
    residual: np.ndarray = field(repr=False)
    g: np.ndarray = field(repr=False)
    g_prime: np.ndarray = field(repr=False)
    g_lipschitz: float

    def max_residual(self) -> float:
        return float(np.max(np.abs(self.residual)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# theta={self.spec.theta!r}\n")
        buf.write(f"# utility={self.spec.utility.tag}\n")
        buf.write(f"# K={self.K}\n")
        buf.write(f"# tail_bound={self.tail_bound!r}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "f", "f_prime", "f_double_prime"])
        for row in zip(self.grid, self.f, self.f_prime, self.f_double_prime):
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


def solve_stein(
    spec: DickmanSpec,
    h: Witness,
    epsilon: float = 1e-6,
    x_max: float = 10.0,
    m: int = NODES_PER_UNIT,
    centering: Optional[float] = None,
) -> SteinSolution:
    """Solve the Stein equation for ``h - E h(D)`` on ``(0, x_max]``.

    ``h`` must carry its derivative and Lipschitz constant (a
    :class:`Witness`).  ``K`` is the least depth with tail bound
    ``<= epsilon``; ``E h(D)`` comes from :func:`centering_constant` unless
    ``centering`` is supplied.
    """
    h = _as_witness(h)
    if x_max <= 0:
        raise ContractError("x_max must be positive")
    rho = _rho(spec)
    lip = float(h.lip)
    mu = _mu_hat(spec, rho, m)
    K = truncation_depth(mu, x_max, rho, epsilon, max(lip, 1e-300)) if lip > 0 else 0
    tail = lip * (mu + x_max) * rho ** (K + 1) / (1.0 - rho)
    kc = _centering_depth(max(lip, 1e-300), mu, rho) if centering is None else 0
    length = max(x_max + K + 2.0, kc + 1.0)
    grid = _Grid(spec, length, m)
    x = grid.x
    ng = int(round((x_max + 1.0) * m)) + 1  # nodes of [0, x_max + 1]
    nx = int(round(x_max * m)) + 1
    cur = np.asarray(h(x), dtype=np.float64)
    dcur = np.asarray(h.d1(x), dtype=np.float64)
    g = np.zeros(ng)
    gp = np.zeros(ng)
    for k in range(max(K + 1, kc) + 1):
        if k <= K:
            g += cur[:ng]
            gp += dcur[:ng]
        if k == max(K + 1, kc):
            break
        nxt = grid.shift_average(cur)
        dcur = grid.shift_derivative(cur, nxt)
        cur = nxt
    c = float(cur[0]) if centering is None else float(centering)
    g = g - (K + 1) * c
    hbar = np.asarray(h(x[:nx]), dtype=np.float64) - c

    f_all = grid.op.average(g)
    xs = x[1:ng]
    fp_all = np.empty(ng)
    fp_all[1:] = grid.r(xs) * (g[1:] - f_all[1:])
    fp_all[0] = np.nan
    if isinstance(spec.utility, Identity):
        th = spec.theta
        avg = grid.op_raised.average(gp)
        fpp = th / x[1:nx] * (gp[1:nx] - avg[1:nx])
        ratio = x[1:nx] / th
    else:
        xx = x[1:nx]
        fpp = grid.rp(xx) * (g[1:nx] - f_all[1:nx]) + grid.r(xx) * (gp[1:nx] - fp_all[1:nx])
        ratio = np.asarray(grid.t(xx)) / np.asarray(grid.tp(xx))
    sl = slice(1, nx)
    shift = slice(1 + m, nx + m)
    residual = ratio * fp_all[sl] + f_all[sl] - f_all[shift] - hbar[sl]
    gl = float(np.max(np.abs(np.diff(g[:nx]))) * m)
    return SteinSolution(
        spec=spec,
        grid=x[sl].copy(),
        f=f_all[sl].copy(),
        f_prime=fp_all[sl].copy(),
        f_double_prime=fpp,
        K=K,
        tail_bound=tail,
        rho=rho,
        mu_hat=mu,
        centering=c,
        residual=residual,
        g=g[sl].copy(),
        g_prime=gp[sl].copy(),
        g_lipschitz=gl,
    )


def counterexample_curvature(b: float) -> float:
    """Right limit at ``x = b`` of ``(A_x h)''`` for ``h = (x - b)_+``, theta = 1.

    ``A_x h = (x - b)**2 / (2x)`` for ``x > b``, whose second derivative
    ``b**2 / x**3`` tends to ``1/b``.
    """
    if not b > 0:
        raise DomainError("b must be positive")
    return 1.0 / b


def counterexample_check(b: float, offset: float = 1.0 / 64, levels: int = 3) -> dict:
    """Solve the Stein equation for ``h = (x - b)_+`` (theta = 1) and read ``f''`` just right of ``b``.

    The series terms after the first contribute at most ``b**2/2`` to
    ``f''``, so at ``x = b (1 + offset)`` we need
    ``f''(x) >= b**2/x**3 - b**2/2``.  The kink of ``h`` makes the grid error
    first order in the step, so ``f''(x)`` is computed on ``levels`` nested
    grids (``b`` and ``x`` on nodes) and Richardson-extrapolated; the change
    between the last two extrapolations is reported as the numerical slack.
    """
    if not b > 0:
        raise DomainError("b must be positive")
    if levels < 3:
        raise ContractError("need at least three grid levels")
    q = Fraction(b).limit_denominator(10**6)
    unit = 64 * q.denominator // math.gcd(q.numerator, 64)
    m0 = unit * max(1, math.ceil(max(NODES_PER_UNIT, 1.0 / (offset * b)) / unit))

    def f(x):
        return np.maximum(x - b, 0.0)

    def d1(x):
        return (x > b).astype(np.float64)

    h = Witness(f"hinge_raw({b:g})", f, d1, np.zeros_like, 1.0, math.inf)
    x_eval = b * (1.0 + offset)
    x_max = max(4.0 * b, 1.0)
    vals = []
    for lvl in range(levels):
        m = m0 << lvl
        sol = solve_stein(DickmanSpec(1.0), h, epsilon=1e-6, x_max=x_max, m=m)
        j = int(np.argmin(np.abs(sol.grid - x_eval)))
        vals.append(float(sol.f_double_prime[j]))
    rich = [2 * vals[i + 1] - vals[i] for i in range(levels - 1)]
    value = rich[-1]
    slack = abs(rich[-1] - rich[-2])
    lower = b * b / x_eval**3 - b * b / 2.0
    return {
        "b": b,
        "x": x_eval,
        "f_double_prime": value,
        "raw": vals,
        "slack": slack,
        "lower_bound": lower,
        "limit": counterexample_curvature(b),
        "ok": value >= lower - slack,
    }
