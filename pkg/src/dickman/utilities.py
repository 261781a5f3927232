"""Utility functions s(.) for the (theta, s)-Dickman family.

A utility is strictly increasing with ``s(0) = 0`` and ``s(1) = 1``.  Every
variant evaluates ``s``, ``s'``, ``s''`` and ``s^{-1}`` on numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import ContractError, DomainError, ExtrapolationError, RangeError
from .numerics import bisect_increasing

__all__ = [
    "ExponentialCARA",
    "Identity",
    "LogShift",
    "PowerMixture",
    "Tabulated",
    "UtilitySpec",
    "check_conditions",
    "utility_deriv",
    "utility_eval",
    "utility_inverse",
]

_LOG2 = math.log(2.0)


def _nonneg(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise DomainError("utility argument must be >= 0")
    return arr


def _out(arr: np.ndarray, like):
    return float(arr) if np.ndim(like) == 0 else arr


class _Utility:
    """Shared scalar/array plumbing; subclasses implement the ``_`` methods."""

    tag = "utility"
    concave = True

    def eval(self, x):
        a = _nonneg(x)
        return _out(self._eval(a), x)

    __call__ = eval

    def deriv(self, x):
        a = _nonneg(x)
        return _out(self._deriv(a), x)

    def deriv2(self, x):
        a = _nonneg(x)
        return _out(self._deriv2(a), x)

    def inverse(self, y):
        a = np.asarray(y, dtype=np.float64)
        if np.any(a < 0) or np.any(np.isnan(a)) or np.any(a > self.sup):
            raise RangeError(f"argument outside the range [0, {self.sup}] of {self.tag}")
        if self.sup_open and np.any(a >= self.sup):
            raise RangeError(f"argument outside the range [0, {self.sup}) of {self.tag}")
        return _out(self._inverse(a), y)

    def inverse_saturating(self, y):
        """``s^{-1}`` with arguments at or above the supremum clamped just below it.

        ``s(x)`` rounds to the supremum for large ``x`` when ``s`` is bounded;
        samplers call this so such values map to a large finite point.
        """
        a = np.asarray(y, dtype=np.float64)
        top = self.sup
        if math.isfinite(top):
            a = np.minimum(a, np.nextafter(top, 0.0) if self.sup_open else top)
        return self.inverse(a if np.ndim(y) else float(a))

    @property
    def sup(self) -> float:
        return math.inf

    sup_open = True

    @property
    def deriv_at_zero_finite(self) -> bool:
        return True

    def _inverse(self, y: np.ndarray) -> np.ndarray:
        flat = y.reshape(-1)
        return bisect_increasing(self._eval, flat).reshape(y.shape)


@dataclass(frozen=True)
class Identity(_Utility):
    tag = "identity"

    def _eval(self, x):
        return x

    def _deriv(self, x):
        return np.ones_like(x)

    def _deriv2(self, x):
        return np.zeros_like(x)

    def _inverse(self, y):
        return y


@dataclass(frozen=True)
class ExponentialCARA(_Utility):
    """``s(x) = (1 - exp(-alpha x)) / (1 - exp(-alpha))``."""

    alpha: float

    def __post_init__(self):
        if not self.alpha > 0 or not math.isfinite(self.alpha):
            raise ContractError("CARA utility needs alpha > 0")

    @property
    def tag(self) -> str:
        return f"exp(alpha={self.alpha!r})"

    @property
    def _norm(self) -> float:
        return -math.expm1(-self.alpha)

    @property
    def sup(self) -> float:
        return 1.0 / self._norm

    def _eval(self, x):
        return -np.expm1(-self.alpha * x) / self._norm

    def _deriv(self, x):
        return self.alpha * np.exp(-self.alpha * x) / self._norm

    def _deriv2(self, x):
        return -self.alpha**2 * np.exp(-self.alpha * x) / self._norm

    def _inverse(self, y):
        return -np.log1p(-y * self._norm) / self.alpha


@dataclass(frozen=True)
class LogShift(_Utility):
    """``s(x) = log(x + 1) / log 2``."""

    tag = "log"

    def _eval(self, x):
        return np.log1p(x) / _LOG2

    def _deriv(self, x):
        return 1.0 / ((1.0 + x) * _LOG2)

    def _deriv2(self, x):
        return -1.0 / ((1.0 + x) ** 2 * _LOG2)

    def _inverse(self, y):
        return np.expm1(y * _LOG2)


@dataclass(frozen=True)
class PowerMixture(_Utility):
    """``s(x) = sum_i w_i x**alpha_i`` with exponents in (0, 1].

    A finite mixture of power utilities; ``uniform(a, m)`` discretises the
    uniform law on ``(0, a]`` by its ``m`` cell midpoints.
    """

    atoms: tuple[tuple[float, float], ...]

    def __post_init__(self):
        atoms = tuple((float(a), float(w)) for a, w in self.atoms)
        if not atoms:
            raise ContractError("power mixture needs at least one atom")
        for a, w in atoms:
            if not 0.0 < a <= 1.0:
                raise ContractError("mixture exponents must lie in (0, 1]")
            if w < 0.0:
                raise ContractError("mixture weights must be >= 0")
        if abs(math.fsum(w for _, w in atoms) - 1.0) > 1e-12:
            raise ContractError("mixture weights must sum to 1")
        object.__setattr__(self, "atoms", tuple((a, w) for a, w in atoms if w > 0))

    @classmethod
    def uniform(cls, a: float, m: int = 32) -> "PowerMixture":
        if not 0.0 < a <= 1.0 or m < 1:
            raise ContractError("need 0 < a <= 1 and m >= 1")
        return cls(tuple((a * (i + 0.5) / m, 1.0 / m) for i in range(m)))

    @property
    def tag(self) -> str:
        return "power[" + ",".join(f"{a:g}:{w:g}" for a, w in self.atoms) + "]"

    @property
    def support_max(self) -> float:
        return max(a for a, _ in self.atoms)

    @property
    def deriv_at_zero_finite(self) -> bool:
        return all(a == 1.0 for a, _ in self.atoms)

    def _eval(self, x):
        out = np.zeros_like(x)
        for a, w in self.atoms:
            out += w * (x if a == 1.0 else x**a)
        return out

    def _deriv(self, x):
        out = np.zeros_like(x)
        with np.errstate(divide="ignore"):
            for a, w in self.atoms:
                out += w * a * (np.ones_like(x) if a == 1.0 else x ** (a - 1.0))
        return out

    def _deriv2(self, x):
        out = np.zeros_like(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            for a, w in self.atoms:
                if a != 1.0:
                    out += w * a * (a - 1.0) * x ** (a - 2.0)
        return out

    def _inverse(self, y):
        # Newton in z = log x: log s(e^z) is a log-sum-exp, so convex and
        # increasing with slope in [min a, max a]; Newton converges from any start
        out = np.zeros_like(y)
        pos = y > 0
        if not pos.any():
            return out
        ly = np.log(y[pos])
        a_bar = sum(a * w for a, w in self.atoms)
        z = ly / a_bar
        polish = False
        for _ in range(100):
            s = np.zeros_like(z)
            ds = np.zeros_like(z)
            for a, w in self.atoms:
                e = w * np.exp(a * z)
                s += e
                ds += a * e
            step = (np.log(s) - ly) * s / ds
            z -= step
            if polish:
                break
            # quadratic convergence: one more step after 1e-8 reaches roundoff
            polish = bool(np.all(np.abs(step) <= 1e-8))
        out[pos] = np.exp(z)
        return out


@dataclass(frozen=True)
class Tabulated(_Utility):
    """Monotone cubic (PCHIP) interpolation through ``(x, s(x))`` knots.

    The knots must start at ``(0, 0)``, cover ``x = 1`` with ``s(1) = 1`` and
    be strictly increasing in both coordinates.  Queries beyond the last knot
    raise :class:`ExtrapolationError`.
    """

    xs: tuple[float, ...]
    ys: tuple[float, ...]
    _pchip: PchipInterpolator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=np.float64)
        ys = np.asarray(self.ys, dtype=np.float64)
        if xs.ndim != 1 or xs.shape != ys.shape or xs.size < 3:
            raise ContractError("need at least three matching knots")
        if xs[0] != 0.0 or ys[0] != 0.0:
            raise ContractError("tabulated utility must start at (0, 0)")
        if np.any(np.diff(xs) <= 0) or np.any(np.diff(ys) <= 0):
            raise ContractError("tabulated knots must be strictly increasing")
        if xs[-1] < 1.0:
            raise ContractError("tabulated grid must cover x = 1")
        object.__setattr__(self, "xs", tuple(xs.tolist()))
        object.__setattr__(self, "ys", tuple(ys.tolist()))
        object.__setattr__(self, "_pchip", PchipInterpolator(xs, ys, extrapolate=False))
        if abs(float(self._pchip(1.0)) - 1.0) > 1e-12:
            raise ContractError("tabulated utility must satisfy s(1) = 1")

    tag = "table"

    @property
    def concave(self) -> bool:  # type: ignore[override]
        # checked on knots only
        slopes = np.diff(self.ys) / np.diff(self.xs)
        return bool(np.all(np.diff(slopes) <= 1e-12 * np.maximum(1.0, np.abs(slopes[1:]))))

    @property
    def sup(self) -> float:
        return self.ys[-1]

    sup_open = False

    @property
    def x_max(self) -> float:
        return self.xs[-1]

    def _check(self, x):
        if np.any(x > self.xs[-1]):
            raise ExtrapolationError(f"tabulated utility queried beyond x = {self.xs[-1]}")

    def _eval(self, x):
        self._check(x)
        return self._pchip(x)

    def _deriv(self, x):
        self._check(x)
        return self._pchip(x, 1)

    def _deriv2(self, x):
        self._check(x)
        return self._pchip(x, 2)

    def _inverse(self, y):
        flat = y.reshape(-1)
        lo = np.zeros_like(flat)
        hi = np.full_like(flat, self.xs[-1])
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            below = self._pchip(mid) < flat
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(hi - lo <= 1e-12 * hi):
                break
        return (0.5 * (lo + hi)).reshape(y.shape)


UtilitySpec = Union[Identity, ExponentialCARA, LogShift, PowerMixture, Tabulated]


def utility_eval(u: UtilitySpec, x):
    return u.eval(x)


def utility_deriv(u: UtilitySpec, x):
    return u.deriv(x)


def utility_inverse(u: UtilitySpec, y):
    return u.inverse(y)


def check_conditions(u: UtilitySpec, grid=None) -> dict[str, bool]:
    """Evaluate the structural conditions on a test grid.

    Returns flags for ``s(0)=0 and s(1)=1`` (to 1e-12), monotonicity,
    ``s(x+1) <= s(x) + 1`` and concavity (second differences <= 0).
    """
    if grid is None:
        top = u.x_max - 1.0 if isinstance(u, Tabulated) else 10.0
        grid = np.linspace(0.0, top, 2001)
    x = np.asarray(grid, dtype=np.float64)
    s = u.eval(x)
    s1 = u.eval(x + 1.0)
    d2 = s[2:] - 2 * s[1:-1] + s[:-2]
    scale = 1e-12 * np.maximum(1.0, np.abs(s[1:-1]))
    return {
        "zero_one": abs(u.eval(0.0)) <= 1e-12 and abs(u.eval(1.0) - 1.0) <= 1e-12,
        # saturating utilities round to equal floats far out; fall back on s' > 0
        "increasing": bool(np.all(np.diff(s) >= 0) and np.all(u.deriv(x[1:]) > 0)),
        "subadditive": bool(np.all(s1 <= s + 1.0 + 1e-12)),
        "concave": bool(np.all(d2 <= scale)) and bool(u.concave),
    }
