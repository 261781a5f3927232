import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dickman.numerics import (
    adaptive_simpson,
    adaptive_simpson_pieces,
    bisect_increasing,
    compensated_cumsum,
    compensated_sum,
)


def test_compensated_sum_beats_naive_on_cancellation():
    vals = [1.0, 1e100, 1.0, -1e100] * 1000
    assert compensated_sum(vals) == 2000.0


def test_compensated_cumsum_long_harmonic_tail():
    k = np.arange(1, 10**6 + 1, dtype=np.float64)
    terms = 1.0 / k**2
    c = compensated_cumsum(terms)
    assert c[-1] == pytest.approx(math.fsum(terms), rel=0, abs=1e-15)
    assert np.all(np.diff(c) > 0)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=200))
def test_compensated_cumsum_last_matches_fsum(xs):
    c = compensated_cumsum(np.array(xs))
    assert c[-1] == pytest.approx(math.fsum(xs), abs=1e-6)


def test_simpson_polynomial_exact():
    val = adaptive_simpson(lambda x: 3 * x**2, 0.0, 2.0, tol=1e-12)
    assert val == pytest.approx(8.0, abs=1e-12)


def test_simpson_endpoint_singularity():
    # int_0^1 x^{-1/2} = 2 with an integrable singularity at 0
    with np.errstate(divide="ignore"):
        val = adaptive_simpson(lambda x: x**-0.5, 0.0, 1.0, tol=1e-9, split=1e-6)
    assert val == pytest.approx(2.0, abs=2e-3)


def test_simpson_pieces_sum_to_total():
    edges = np.linspace(0, math.pi, 7)
    pieces = adaptive_simpson_pieces(np.sin, edges, tol=1e-12)
    assert len(pieces) == 6
    assert math.fsum(pieces) == pytest.approx(2.0, abs=1e-10)


@given(st.floats(1e-6, 1e6))
def test_bisect_recovers_square_root(target):
    x = bisect_increasing(lambda v: v * v, target, lo=0.0, hi=1.0)
    assert float(np.squeeze(x)) == pytest.approx(math.sqrt(target), rel=1e-10)
