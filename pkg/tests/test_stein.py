import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dickman.core import DickmanSpec, sample_dtheta, sample_dtheta_s
from dickman.errors import CertificationError, DomainError
from dickman.stein import (
    _Grid,
    average_derivatives,
    averaging_operator,
    centering_constant,
    counterexample_check,
    counterexample_curvature,
    iterate_averages,
    solve_stein,
    truncation_depth,
)
from dickman.utilities import ExponentialCARA, LogShift, PowerMixture, Tabulated
from dickman.witnesses import Witness, cosine, hinge, identity, sine

SPECS = [
    DickmanSpec(1.0),
    DickmanSpec(0.5),
    DickmanSpec(2.0),
    DickmanSpec(1.0, LogShift()),
    DickmanSpec(2.0, ExponentialCARA(1.0)),
    DickmanSpec(1.0, PowerMixture(((0.5, 0.5), (1.0, 0.5)))),
]
SPEC_IDS = ["id-1", "id-0.5", "id-2", "log-1", "exp-2", "power-1"]

ZERO = Witness("0", np.zeros_like, np.zeros_like, np.zeros_like, 0.0, 0.0)


def test_averaging_examples():
    spec = DickmanSpec(1.0)
    assert averaging_operator(spec, lambda v: np.maximum(v - 1.0, 0.0), 2.0) == pytest.approx(0.25, abs=1e-9)
    assert averaging_operator(spec, lambda v: v, 3.0) == pytest.approx(1.5, abs=1e-9)
    with pytest.raises(DomainError):
        averaging_operator(spec, lambda v: v, -1.0)


@pytest.mark.parametrize("spec", SPECS, ids=SPEC_IDS)
@given(x=st.floats(0.0, 30.0))
def test_averaging_preserves_constants(spec, x):
    assert averaging_operator(spec, lambda v: np.full_like(v, 7.0), x) == pytest.approx(7.0, abs=1e-9)


@given(x=st.floats(0.01, 20.0), theta=st.floats(0.2, 5.0))
def test_averaging_identity_closed_form(x, theta):
    # A_x v = theta/(theta+1) x for t(v) = v**theta
    val = averaging_operator(DickmanSpec(theta), lambda v: v, x)
    assert val == pytest.approx(theta / (theta + 1) * x, abs=1e-9)


@pytest.mark.parametrize("spec", SPECS, ids=SPEC_IDS)
def test_grid_operator_preserves_constants(spec):
    g = _Grid(spec, 12.0)
    out = g.shift_average(np.full(g.n_nodes, -2.5))
    assert np.max(np.abs(out + 2.5)) < 1e-12


@pytest.mark.parametrize("spec", SPECS[:3], ids=SPEC_IDS[:3])
def test_grid_operator_matches_quadrature(spec):
    g = _Grid(spec, 8.0)
    h = np.cos
    out = g.shift_average(h(g.x))
    for x in (0.0, 0.37, 2.0, 5.5):
        j = int(round(x * g.m))
        assert out[j] == pytest.approx(averaging_operator(spec, h, g.x[j] + 1.0), abs=1e-9)


def test_iterate_zero_and_identity():
    spec = DickmanSpec(1.0)
    r = iterate_averages(spec, np.cos, 3, a=2.0, center=False)
    assert np.array_equal(r.iterates[0], np.cos(r.x))
    z = iterate_averages(spec, np.zeros_like, 4, a=2.0)
    assert all(np.all(it == 0) for it in z.iterates)


def test_iterate_exact_oracle():
    # h(x) = x - 1 is centred for theta = 1 and A_{x+1} maps x - 1 to (x - 1)/2
    r = iterate_averages(DickmanSpec(1.0), lambda x: x - 1.0, 12, a=5.0, center=False)
    for k, it in enumerate(r.iterates):
        assert np.max(np.abs(it - (r.x - 1.0) / 2**k)) < 1e-12


@pytest.mark.parametrize("spec", SPECS, ids=SPEC_IDS)
@pytest.mark.parametrize("w", [cosine(1.0), sine(1.0), hinge(1.0)], ids=["cos", "sin", "hinge"])
def test_iterate_sup_norm_decay(spec, w):
    a = 5.0
    r = iterate_averages(spec, w, 20, a=a)
    from dickman.stein import _mu_hat, _rho

    rho = _rho(spec)
    mu = _mu_hat(spec, rho, 512)
    for k, it in enumerate(r.iterates):
        assert np.max(np.abs(it)) <= (mu + a) * rho**k + 1e-9


def test_centering_matches_monte_carlo():
    for spec in (DickmanSpec(1.0), DickmanSpec(2.0), DickmanSpec(1.0, LogShift())):
        c = centering_constant(spec, np.cos)
        d = sample_dtheta_s(spec, 60, 10**6, 31).values
        v = np.cos(d)
        assert abs(c - v.mean()) <= 4 * v.std() / math.sqrt(d.size)


def test_truncation_depth():
    assert truncation_depth(1.0, 10.0, 0.5, 1e-6) == 24
    assert 11 * 0.5**24 <= 1e-6 < 11 * 0.5**23  # without the 1/(1 - rho) factor the depth would be 23


@given(st.floats(0.0, 10.0), st.floats(0.1, 50.0), st.floats(0.05, 0.95), st.floats(1e-12, 1.0))
def test_truncation_depth_is_least(mu, x_max, rho, eps):
    k = truncation_depth(mu, x_max, rho, eps)
    c = (mu + x_max) / (1 - rho)
    assert c * rho ** (k + 1) <= eps * (1 + 1e-12)
    if k > 0:
        assert c * rho**k > eps


def test_zero_witness_gives_zero_solution():
    sol = solve_stein(DickmanSpec(1.0), ZERO)
    assert np.all(sol.f == 0) and np.all(sol.f_prime == 0)


@pytest.mark.parametrize("spec", SPECS, ids=SPEC_IDS)
def test_stein_residual_and_lipschitz(spec):
    sol = solve_stein(spec, sine(1.0), epsilon=1e-6, x_max=6.0)
    assert sol.max_residual() <= sol.tail_bound + 1e-7
    assert sol.g_lipschitz <= (1 - sol.rho ** (sol.K + 1)) / (1 - sol.rho) + 1e-6


@pytest.mark.parametrize("theta", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("w", [sine(1.0), cosine(2.0), hinge(1.0), identity()], ids=["sin", "cos2", "hinge", "x"])
def test_stein_derivative_bounds(theta, w):
    sol = solve_stein(DickmanSpec(theta), w, epsilon=1e-6, x_max=6.0)
    assert np.max(np.abs(sol.f_prime)) <= theta * w.lip + 1e-6
    assert np.max(np.abs(sol.f_double_prime)) <= theta / 2 * max(w.lip, w.lip2) + 1e-6


def test_stein_identity_witness_exact():
    # h(x) = x - theta is solved by f(x) = theta x + const
    for theta in (0.5, 2.0):
        sol = solve_stein(DickmanSpec(theta), identity(), x_max=4.0)
        assert np.max(np.abs(sol.f_prime - theta)) < 1e-6
        assert np.max(np.abs(sol.f_double_prime)) < 1e-6


def test_stein_operator_has_zero_mean_under_dickman():
    theta = 1.0
    sol = solve_stein(DickmanSpec(theta), cosine(1.0), x_max=12.0)
    d = sample_dtheta(theta, 60, 400_000, 41).values
    d = d[d <= 11.0]
    f = np.interp(d, sol.grid, sol.f)
    f1 = np.interp(d + 1.0, sol.grid, sol.f)
    fp = np.interp(d, sol.grid, sol.f_prime)
    z = d / theta * fp + f - f1
    assert abs(z.mean()) <= 4 * z.std() / math.sqrt(z.size)


@pytest.mark.parametrize("theta", [0.5, 1.0, 3.0])
def test_derivative_contraction(theta):
    spec = DickmanSpec(theta)
    y = np.linspace(1.0, 12.0, 45)  # y = x + 1
    for w, alpha, beta in ((sine(1.0), 1.0, 1.0), (hinge(2.0), 1.0, 1.0), (cosine(2.0), 1.0, 1.0)):
        d1, d2 = average_derivatives(spec, w, y)
        assert np.max(np.abs(d1)) <= alpha * theta / (theta + 1) + 1e-9
        assert np.max(np.abs(d2)) <= beta * theta / (theta + 2) + 1e-9


def test_uncertified_refused():
    u = Tabulated((0.0, 0.5, 1.0, 2.0, 3.0), (0.0, 0.2, 1.0, 1.2, 2.5))
    with pytest.raises(CertificationError):
        solve_stein(DickmanSpec(1.0, u), sine(1.0))


def test_csv_export():
    sol = solve_stein(DickmanSpec(1.0), cosine(1.0), epsilon=1e-3, x_max=1.0)
    lines = sol.to_csv().splitlines()
    assert lines[0] == "# theta=1.0"
    assert lines[1] == "# utility=identity"
    assert lines[2] == f"# K={sol.K}"
    assert lines[3].startswith("# tail_bound=")
    assert lines[4] == "x,f,f_prime,f_double_prime"
    assert len(lines) == 5 + sol.grid.size


def test_counterexample_curvature():
    assert counterexample_curvature(1.0) == 1.0
    assert counterexample_curvature(0.1) == 10.0
    assert counterexample_curvature(0.01) == 100.0
    with pytest.raises(DomainError):
        counterexample_curvature(0.0)


def test_counterexample_check_b1():
    r = counterexample_check(1.0)
    assert r["ok"]
    assert r["limit"] == 1.0
