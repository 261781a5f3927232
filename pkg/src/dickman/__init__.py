"""Sampling, Stein solutions and bound checks for Dickman-type limits."""

from .core import (
    DickmanSpec,
    RhoResult,
    SampleBatch,
    coupled_contraction,
    depth_for_epsilon,
    rho_bound,
    sample_dtheta,
    sample_dtheta_path,
    sample_dtheta_s,
)
from .errors import (
    CertificationError,
    ContractError,
    DickmanError,
    DomainError,
    ExtrapolationError,
    RangeError,
    ResourceError,
)
from .metrics import check_bound, reference_oracle, smooth_distance_lower, wasserstein1_empirical
from .primes import (
    BernoulliPrime,
    GeometricPrime,
    PoissonInvPrime,
    PoissonLogRatio,
    PrimeTable,
    build_prime_table,
    coupling_TU,
    sample_prime_sum,
    size_bias_check,
)
from .report import BoundReport
from .stein import averaging_operator, counterexample_curvature, iterate_averages, solve_stein
from .utilities import ExponentialCARA, Identity, LogShift, PowerMixture, Tabulated
from .weighted_sums import (
    BernoulliMarks,
    Deterministic,
    PoissonMarks,
    ScaledGamma,
    SumSpec,
    sample_record_sum,
    sample_weighted_sum,
)

__version__ = "0.1.0"

__all__ = [
    "BernoulliMarks",
    "BernoulliPrime",
    "BoundReport",
    "CertificationError",
    "ContractError",
    "Deterministic",
    "DickmanError",
    "DickmanSpec",
    "DomainError",
    "ExponentialCARA",
    "ExtrapolationError",
    "GeometricPrime",
    "Identity",
    "LogShift",
    "PoissonInvPrime",
    "PoissonLogRatio",
    "PoissonMarks",
    "PowerMixture",
    "PrimeTable",
    "RangeError",
    "ResourceError",
    "RhoResult",
    "SampleBatch",
    "ScaledGamma",
    "SumSpec",
    "Tabulated",
    "averaging_operator",
    "build_prime_table",
    "check_bound",
    "counterexample_curvature",
    "coupled_contraction",
    "coupling_TU",
    "depth_for_epsilon",
    "iterate_averages",
    "reference_oracle",
    "rho_bound",
    "sample_dtheta",
    "sample_dtheta_path",
    "sample_dtheta_s",
    "sample_prime_sum",
    "sample_record_sum",
    "sample_weighted_sum",
    "size_bias_check",
    "smooth_distance_lower",
    "solve_stein",
    "wasserstein1_empirical",
]
