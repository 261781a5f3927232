"""Bound-check records and the verdict rule."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

__all__ = ["BoundReport", "bound_verdict", "zscore_verdict"]

PASS, FAIL, INCONCLUSIVE = "pass", "fail", "inconclusive"


def bound_verdict(theoretical: float, empirical: float, stderr: float, slack: float = 0.0) -> str:
    """``inconclusive`` if the noise exceeds half the bound, else pass/fail.

    Pass means ``empirical <= theoretical + 5 stderr + slack``.
    """
    if stderr > theoretical / 2.0:
        return INCONCLUSIVE
    return PASS if empirical <= theoretical + 5.0 * stderr + slack else FAIL


def zscore_verdict(gaps, stderrs, limit: float = 5.0) -> str:
    """Pass when every ``|gap| <= limit * stderr`` (identity checks)."""
    ok = all(abs(g) <= limit * s for g, s in zip(gaps, stderrs))
    return PASS if ok else FAIL


def _num(x: float):
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x


@dataclass(frozen=True)
class BoundReport:
    claim_id: str
    theoretical: float
    empirical: float
    mc_stderr: float
    samples: int
    verdict: str
    details: dict[str, Any] = field(default_factory=dict, compare=False)

    @property
    def passed(self) -> bool:
        return self.verdict == PASS

    def to_dict(self) -> dict[str, Any]:
        return {
            "claim_id": self.claim_id,
            "theoretical": _num(float(self.theoretical)),
            "empirical": _num(float(self.empirical)),
            "mc_stderr": _num(float(self.mc_stderr)),
            "samples": int(self.samples),
            "verdict": self.verdict,
        }

    def to_json(self) -> str:
        """Single-line JSON record with the six report fields."""
        return json.dumps(self.to_dict(), separators=(", ", ": "))
