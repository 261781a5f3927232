"""Distance estimators, the certified reference sampler and bound checks.

Only two kinds of numbers are reported for the smooth metric: exact
theoretical upper bounds and finite-dictionary lower bounds.  The smooth
distance itself is never estimated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Optional, Sequence

import numpy as np

from . import rng as _rng
from .core import (
    DickmanSpec,
    SampleBatch,
    _recursion_batch,
    coupled_contraction,
    depth_for_epsilon,
    sample_dtheta_path,
    sample_dtheta_s,
)
from .errors import ContractError
from .primes import (
    MARK_LAWS,
    BernoulliPrime,
    GeometricPrime,
    PoissonInvPrime,
    PoissonLogRatio,
    coupling_TU,
    mu_n,
    prime_table,
    sample_prime_sum,
    size_bias_check,
)
from .report import BoundReport, bound_verdict
from .utilities import Identity, UtilitySpec
from .weighted_sums import (
    BernoulliMarks,
    Deterministic,
    PoissonMarks,
    ScaledGamma,
    SumSpec,
    sample_weighted_sum,
    theoretical_bound,
)
from .witnesses import Witness, smooth_dictionary

__all__ = [
    "BoundReport",
    "CLAIMS",
    "DistanceResult",
    "check_bound",
    "reference_oracle",
    "smooth_distance_lower",
    "wasserstein1_empirical",
]

N_BOOT = 200
STABILITY_TOL = 0.2


def _values(x) -> np.ndarray:
    return x.values if isinstance(x, SampleBatch) else np.asarray(x, dtype=np.float64)


def wasserstein1_empirical(a, b, n_boot: int = N_BOOT, seed: int = 0) -> tuple[float, float]:
    """Wasserstein-1 distance between two equal-size empirical measures.

    On the line the optimal coupling matches order statistics, so the
    estimate is ``mean |a_(i) - b_(i)|``.  The standard error comes from
    ``n_boot`` bootstrap resamples of each batch (``n_boot = 0`` skips it
    and returns ``nan``).
    """
    va, vb = np.sort(_values(a)), np.sort(_values(b))
    if va.size != vb.size:
        raise ContractError(f"batch sizes differ: {va.size} vs {vb.size}")
    m = va.size
    if m == 0:
        raise ContractError("empty batches")
    est = float(np.mean(np.abs(va - vb)))
    if n_boot <= 0 or m < 2:
        return est, math.nan
    reps = np.empty(n_boot)
    base = _rng.OP["bootstrap"] << 32
    for r in range(n_boot):
        g = _rng.stream(seed, base | r)
        # multiplicities of a uniform resample keep the sorted order for free
        ca = np.bincount(g.integers(0, m, m), minlength=m)
        cb = np.bincount(g.integers(0, m, m), minlength=m)
        reps[r] = np.mean(np.abs(np.repeat(va, ca) - np.repeat(vb, cb)))
    return est, float(np.std(reps, ddof=1))


@dataclass(frozen=True)
class DistanceResult:
    """Dictionary lower bound with the witness that attains it."""

    value: float
    stderr: float
    witness: str
    gaps: dict

    def __float__(self) -> float:
        return self.value


def smooth_distance_lower(a, b, dictionary: Optional[Sequence[Witness]] = None, details: bool = False):
    """Largest mean gap ``|mean_a h - mean_b h|`` over a test-function dictionary.

    A lower bound on the smooth (|h'| <= 1, h' 1-Lipschitz) distance.  By
    default the dictionary is :func:`smooth_dictionary` with hinges at the
    quartiles of ``b`` (the reference).  With ``details`` returns a
    :class:`DistanceResult` carrying the maximising witness, its standard
    error and every gap.
    """
    va, vb = _values(a), _values(b)
    if va.size < 2 or vb.size < 2:
        raise ContractError("need at least two samples per batch")
    if dictionary is None:
        dictionary = smooth_dictionary(tuple(np.quantile(vb, [0.25, 0.5, 0.75])))
    best = (-1.0, 0.0, "")
    gaps = {}
    for w in dictionary:
        fa, fb = w(va), w(vb)
        gap = float(np.mean(fa) - np.mean(fb))
        se = math.sqrt(np.var(fa, ddof=1) / va.size + np.var(fb, ddof=1) / vb.size)
        gaps[w.name] = (gap, se)
        if abs(gap) > best[0]:
            best = (abs(gap), se, w.name)
    if not details:
        return best[0]
    return DistanceResult(best[0], best[1], best[2], gaps)


def reference_oracle(
    theta: float,
    epsilon: float,
    num_samples: int,
    seed: int,
    threads: Optional[int] = None,
) -> SampleBatch:
    """``D_theta`` batch whose certified Wasserstein-1 error is at most ``epsilon``."""
    if not epsilon > 0:
        raise ContractError("epsilon must be positive")
    depth = depth_for_epsilon(theta, epsilon)
    b = _recursion_batch(theta, depth, num_samples, seed, threads, "reference")
    return SampleBatch(b.values, seed, depth, b.certified_d1, "reference")


# bound checks

REFERENCE_EPS = 1e-3


def _weights(params: dict):
    v = params.get("weight_var")
    if v is None or v == 0:
        return Deterministic()
    return ScaledGamma(float(v), float(params.get("weight_eps", 1.0)))


def _sum_claim(claim_id: str, spec: SumSpec, samples: int, seed: int) -> BoundReport:
    batch = sample_weighted_sum(spec, samples, seed)
    ref = reference_oracle(spec.marks.theta, REFERENCE_EPS, samples, seed)
    d = smooth_distance_lower(batch, ref, details=True)
    theo = theoretical_bound(spec)
    slack = float(ref.certified_d1)
    mean_gap = d.gaps["x"]
    return BoundReport(
        claim_id,
        theo,
        d.value,
        d.stderr,
        samples,
        bound_verdict(theo, d.value, d.stderr, slack),
        {
            "n": spec.n,
            "witness": d.witness,
            "reference_slack": slack,
            "mean_gap": mean_gap[0],
            "mean_gap_stderr": mean_gap[1],
            "gaps": {k: v[0] for k, v in d.gaps.items()},
        },
    )


def _claim_weighted_bernoulli(p: dict) -> BoundReport:
    spec = SumSpec(int(p.get("n", 100)), BernoulliMarks(), _weights(p))
    return _sum_claim("weighted-bernoulli", spec, int(p.get("samples", 10**5)), int(p.get("seed", 0)))


def _claim_poisson_sum(p: dict) -> BoundReport:
    spec = SumSpec(int(p.get("n", 100)), PoissonMarks(float(p.get("theta", 1.0))), _weights(p))
    return _sum_claim("poisson-sum", spec, int(p.get("samples", 10**5)), int(p.get("seed", 0)))


def _rate_claim(claim_id: str, marks, p: dict) -> BoundReport:
    """Fit ``E|T - U| ~ C / log n`` and check that ``C`` is stable across ``n``."""
    ns = [int(n) for n in p.get("ns", (10**3, 10**4, 10**5))]
    samples = int(p.get("samples", 10**5))
    seed = int(p.get("seed", 0))
    table = prime_table(max(ns), p.get("table_cache"))
    scaled, ses, per_n = [], [], {}
    for n in ns:
        t = table.truncate(n)
        c = coupling_TU(t, marks, samples, seed)
        scaled.append(c.mean_abs * math.log(n))
        ses.append(c.stderr * math.log(n))
        entry = {"E|T-U|": c.mean_abs, "stderr": c.stderr, "scaled": scaled[-1], "mu_n": mu_n(t, marks)}
        if p.get("with_distance", True):
            sb = sample_prime_sum(t, marks, samples, seed)
            ref = reference_oracle(1.0, REFERENCE_EPS, samples, seed)
            entry["distance_lower"] = smooth_distance_lower(sb, ref)
            entry["mean_witness"] = abs(mu_n(t, marks) - 1.0)
        per_n[n] = entry
    fitted = float(np.mean(scaled))
    dev = [abs(c / fitted - 1.0) for c in scaled]
    j = int(np.argmax(dev))
    rel_se = ses[j] / fitted
    ok = all(d <= STABILITY_TOL + 5.0 * s / fitted for d, s in zip(dev, ses))
    return BoundReport(
        claim_id,
        fitted,
        dev[j],
        rel_se,
        samples * len(ns),
        "pass" if ok else "fail",
        {"fitted_C": fitted, "tolerance": STABILITY_TOL, "per_n": per_n},
    )


def _claim_prime_geometric(p: dict) -> BoundReport:
    return _rate_claim("prime-geometric", GeometricPrime(), p)


def _claim_prime_bernoulli(p: dict) -> BoundReport:
    return _rate_claim("prime-bernoulli", BernoulliPrime(), p)


def _claim_poisson_prime_inv(p: dict) -> BoundReport:
    return _rate_claim("poisson-prime-inv", PoissonInvPrime(), p)


def _claim_poisson_prime_logratio(p: dict) -> BoundReport:
    n = int(p.get("n", 10**4))
    samples = int(p.get("samples", 10**5))
    table = prime_table(n, p.get("table_cache"))
    c = coupling_TU(table, PoissonLogRatio(), samples, int(p.get("seed", 0)))
    theo = math.log(2.0) / table.log_pn
    return BoundReport(
        "poisson-prime-logratio",
        theo,
        c.mean_abs,
        c.stderr,
        samples,
        bound_verdict(theo, c.mean_abs, c.stderr),
        {"n": n},
    )


def _claim_size_bias(p: dict) -> BoundReport:
    marks = MARK_LAWS[p.get("marks", "geometric")]()
    table = prime_table(int(p.get("n", 1000)), p.get("table_cache"))
    return size_bias_check(table, marks, int(p.get("samples", 10**5)), int(p.get("seed", 0)))


def _utility(p: dict) -> UtilitySpec:
    u = p.get("utility")
    return Identity() if u is None else u


def _claim_simulation_bound(p: dict) -> BoundReport:
    spec = DickmanSpec(float(p.get("theta", 1.0)), _utility(p))
    depth = int(p.get("depth", 5))
    samples = int(p.get("samples", 10**5))
    seed = int(p.get("seed", 0))
    batch = sample_dtheta_s(spec, depth, samples, seed)
    if batch.certified_d1 is None:
        raise ContractError("utility has no certified contraction constant")
    ref_depth = int(p.get("reference_depth", depth + 40))
    ref = sample_dtheta_s(spec, ref_depth, samples, seed + 1)
    est, se = wasserstein1_empirical(batch, ref, int(p.get("n_boot", N_BOOT)), seed)
    theo = float(batch.certified_d1)
    return BoundReport(
        "simulation-bound",
        theo,
        est,
        se,
        samples,
        bound_verdict(theo, est, se, float(ref.certified_d1)),
        {"depth": depth, "reference_depth": ref_depth, "utility": spec.utility.tag},
    )


def _claim_recursion_decay(p: dict) -> BoundReport:
    theta = float(p.get("theta", 1.0))
    n = int(p.get("depth", p.get("n", 10)))
    ref_depth = int(p.get("reference_depth", 40))
    samples = int(p.get("samples", 10**5))
    if not 0 <= n < ref_depth - 1:
        raise ContractError("depth must be below the reference depth minus one")
    path = sample_dtheta_path(theta, [n, n + 1, ref_depth], samples, int(p.get("seed", 0)))
    ref = path[ref_depth].values
    # the path batches are pointwise ordered, so empirical W1 is the mean gap
    d0 = ref - path[n].values
    d1 = ref - path[n + 1].values
    w0, w1 = wasserstein1_empirical(path[n], path[ref_depth], 0)[0], wasserstein1_empirical(path[n + 1], path[ref_depth], 0)[0]
    r = w1 / w0
    z = (d1 - r * d0) / d0.mean()
    se = float(np.std(z, ddof=1) / math.sqrt(samples))
    theo = theta / (theta + 1.0)
    return BoundReport(
        "recursion-decay",
        theo,
        r,
        se,
        samples,
        bound_verdict(theo, r, se),
        {"depth": n, "reference_depth": ref_depth, "w1": [w0, w1]},
    )


def _claim_utility_decay(p: dict) -> BoundReport:
    spec = DickmanSpec(float(p.get("theta", 1.0)), _utility(p))
    n = int(p.get("depth", p.get("n", 5)))
    samples = int(p.get("samples", 10**5))
    res = coupled_contraction(spec, n + 1, samples, int(p.get("seed", 0)))
    ratios = res.ratios[: n + 1]
    ses = res.ratio_stderrs[: n + 1]
    theo = spec.theta / (spec.theta + 1.0)
    j = int(np.argmax(ratios - theo - 5 * ses))
    ok = all(r <= theo + 5 * s for r, s in zip(ratios, ses))
    return BoundReport(
        "utility-decay",
        theo,
        float(ratios[j]),
        float(ses[j]),
        samples,
        "pass" if ok else "fail",
        {"ratios": ratios.tolist(), "utility": spec.utility.tag},
    )


@dataclass(frozen=True)
class Claim:
    claim_id: str
    statement: str
    run: Callable[[dict], BoundReport]


CLAIMS: dict[str, Claim] = {
    c.claim_id: c
    for c in (
        Claim(
            "weighted-bernoulli",
            "weighted Bernoulli sum W_n vs D_1: smooth distance <= 3/(4n) + variance term",
            _claim_weighted_bernoulli,
        ),
        Claim(
            "poisson-sum",
            "weighted Poisson sum W_n vs D_theta: smooth distance <= theta/(4n) + variance terms",
            _claim_poisson_sum,
        ),
        Claim(
            "prime-geometric",
            "prime sum with geometric marks: coupling error E|T_n - U| = O(1/log n)",
            _claim_prime_geometric,
        ),
        Claim(
            "prime-bernoulli",
            "prime sum with Bernoulli marks: coupling error E|T_n - U| = O(1/log n)",
            _claim_prime_bernoulli,
        ),
        Claim(
            "poisson-prime-inv",
            "prime sum with Poisson(1/(1+p_k)) marks: coupling error = O(1/log n)",
            _claim_poisson_prime_inv,
        ),
        Claim(
            "poisson-prime-logratio",
            "prime sum with Poisson(1 - log p_{k-1}/log p_k) marks: E|T_n - U| <= log 2 / log p_n",
            _claim_poisson_prime_logratio,
        ),
        Claim(
            "size-bias",
            "size-bias identity E[S phi(S)] = mu E[phi(S+T)] + R_phi for prime sums",
            _claim_size_bias,
        ),
        Claim(
            "simulation-bound",
            "depth-n recursion vs D_{theta,s}: d1 <= (1-rho)^-1 (theta/(theta+1))^n E[s^-1(U^(1/theta))]",
            _claim_simulation_bound,
        ),
        Claim(
            "recursion-decay",
            "d1(W_n, D_theta) shrinks by theta/(theta+1) per recursion step",
            _claim_recursion_decay,
        ),
        Claim(
            "utility-decay",
            "coupled chains: E|s(W_n) - s(V_n)| shrinks by theta/(theta+1) per step",
            _claim_utility_decay,
        ),
    )
}


def check_bound(claim_id: str, params: Optional[dict[str, Any]] = None) -> BoundReport:
    """Run the registered check ``claim_id`` with ``params`` and return its report."""
    claim = CLAIMS.get(claim_id)
    if claim is None:
        raise ContractError(f"unknown claim id {claim_id!r}; known: {', '.join(sorted(CLAIMS))}")
    return claim.run(dict(params or {}))
