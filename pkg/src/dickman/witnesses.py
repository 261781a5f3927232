"""Finite test-function dictionaries with analytic smoothness constants.

``smooth_dictionary`` holds functions with ``|h'| <= 1`` and ``|h''| <= 1``
(so ``h'`` is 1-Lipschitz); ``half_lipschitz_dictionary`` holds functions
with ``|phi'| <= 1/2``.  Each entry carries its first two derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Witness",
    "cosine",
    "half_lipschitz_dictionary",
    "hinge",
    "identity",
    "sine",
    "smooth_dictionary",
]

Fn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Witness:
    """A test function with derivatives and their sup-norm bounds."""

    name: str
    f: Fn
    d1: Fn
    d2: Fn
    lip: float  # sup |f'|
    lip2: float  # sup |f''|

    def __call__(self, x):
        return self.f(np.asarray(x, dtype=np.float64))

    def scaled(self, c: float) -> "Witness":
        f, d1, d2 = self.f, self.d1, self.d2
        return Witness(
            f"{c:g}*{self.name}",
            lambda x: c * f(x),
            lambda x: c * d1(x),
            lambda x: c * d2(x),
            abs(c) * self.lip,
            abs(c) * self.lip2,
        )


def identity() -> Witness:
    return Witness("x", lambda x: x, np.ones_like, np.zeros_like, 1.0, 0.0)


def sine(omega: float = 1.0) -> Witness:
    """``sin(omega x) / max(omega, omega**2)``."""
    k = max(omega, omega * omega)
    return Witness(
        f"sin({omega:g}x)/{k:g}",
        lambda x: np.sin(omega * x) / k,
        lambda x: omega * np.cos(omega * x) / k,
        lambda x: -omega * omega * np.sin(omega * x) / k,
        omega / k,
        omega * omega / k,
    )


def cosine(omega: float = 1.0) -> Witness:
    """``cos(omega x) / max(omega, omega**2)``."""
    k = max(omega, omega * omega)
    return Witness(
        f"cos({omega:g}x)/{k:g}",
        lambda x: np.cos(omega * x) / k,
        lambda x: -omega * np.sin(omega * x) / k,
        lambda x: -omega * omega * np.cos(omega * x) / k,
        omega / k,
        omega * omega / k,
    )


def hinge(c: float) -> Witness:
    """``(x - c)_+`` with the kink smoothed: ``h'`` ramps 0 -> 1 on ``[c-1/2, c+1/2]``."""

    def f(x):
        z = x - c + 0.5
        return np.where(z <= 0, 0.0, np.where(z >= 1, x - c, 0.5 * z * z))

    def d1(x):
        return np.clip(x - c + 0.5, 0.0, 1.0)

    def d2(x):
        z = x - c + 0.5
        return ((z > 0) & (z < 1)).astype(np.float64)

    return Witness(f"hinge({c:g})", f, d1, d2, 1.0, 1.0)


def smooth_dictionary(centers: Sequence[float] = (0.5, 1.0, 1.5)) -> list[Witness]:
    """Dictionary for the smooth (``|h'| <= 1``, ``h'`` 1-Lipschitz) metric.

    ``centers`` places the smoothed hinges, typically reference quantiles.
    """
    out = [identity()]
    for w in (1.0, 2.0):
        out += [sine(w), cosine(w)]
    out += [hinge(float(c)) for c in centers]
    return out


def half_lipschitz_dictionary(centers: Sequence[float] = (0.5, 1.0, 1.5)) -> list[Witness]:
    """Functions with ``|phi'| <= 1/2``: x/2, sin/2, cos/2 and half hinges."""
    base = [identity(), sine(1.0), cosine(1.0)] + [hinge(float(c)) for c in centers]
    return [w.scaled(0.5) for w in base]
