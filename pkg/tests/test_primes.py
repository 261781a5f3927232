import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from dickman.errors import ContractError, ResourceError
from dickman.primes import (
    EULER_GAMMA,
    BernoulliPrime,
    GeometricPrime,
    PoissonInvPrime,
    PoissonLogRatio,
    PrimeTable,
    breakpoints,
    build_prime_table,
    coupling_l1_exact,
    coupling_TU,
    first_primes,
    load_prime_table,
    mu_n,
    prime_table,
    remainder_envelope,
    remainder_term,
    sample_prime_sum,
    save_prime_table,
    size_bias_check,
    size_bias_enumerate,
)
from dickman.witnesses import cosine, hinge, identity, sine

ALL_MARKS = [GeometricPrime(), BernoulliPrime(), PoissonInvPrime(), PoissonLogRatio()]


def _naive_primes(limit):
    sieve = np.ones(limit + 1, dtype=bool)
    sieve[:2] = False
    for i in range(2, int(limit**0.5) + 1):
        if sieve[i]:
            sieve[i * i :: i] = False
    return np.flatnonzero(sieve)


@pytest.fixture(scope="module")
def table_1e5():
    return build_prime_table(10**5)


def test_first_primes():
    assert first_primes(5).tolist() == [2, 3, 5, 7, 11]
    assert first_primes(1).tolist() == [2]


@pytest.mark.parametrize("block", [1000, 10**6])
def test_sieve_matches_naive(block):
    ref = _naive_primes(300_000)
    got = first_primes(ref.size, block=block)
    assert np.array_equal(got, ref)


def test_n_equals_one_means():
    t = build_prime_table(1)
    assert t.mu_geometric == 1.0
    assert t.mu_bernoulli == pytest.approx(1 / 3, abs=1e-15)


def test_breakpoints_endpoints(table_1e5):
    for m in ALL_MARKS:
        f = breakpoints(table_1e5, m)
        assert f[0] == 0.0 and f[-1] == 1.0
        assert np.all(np.diff(f) > 0)


def test_means_match_defining_sums():
    t = build_prime_table(2000)
    p = t.primes.astype(float)
    assert t.mu_geometric == pytest.approx(math.fsum(np.log(p) / (p - 1)) / math.log(p[-1]), abs=1e-12)
    assert t.mu_bernoulli == pytest.approx(math.fsum(np.log(p) / (p + 1)) / math.log(p[-1]), abs=1e-12)


@given(st.integers(1, 3000))
def test_logratio_mean_telescopes(n):
    t = PrimeTable.from_primes(first_primes(n))
    lam = 1.0 - np.concatenate([[0.0], t.logs[:-1]]) / t.logs
    assert math.fsum(lam * t.logs) / t.log_pn == pytest.approx(1.0, abs=1e-12)
    assert mu_n(t, PoissonLogRatio()) == 1.0


def test_memory_budget():
    with pytest.raises(ResourceError):
        build_prime_table(10**6, memory_budget=10**6)


def test_cache_round_trip(tmp_path):
    t = build_prime_table(5000)
    path = str(tmp_path / "p.bin")
    save_prime_table(t, path)
    raw = open(path, "rb").read()
    assert raw[:4] == b"DKPT"
    assert int.from_bytes(raw[8:16], "little") == 5000
    u = load_prime_table(path)
    assert np.array_equal(u.primes, t.primes)
    assert u.mu_geometric == t.mu_geometric
    # a smaller request reuses the cache
    assert prime_table(100, path).n == 100


def test_cache_rejects_tampering(tmp_path):
    t = build_prime_table(100)
    path = tmp_path / "p.bin"
    save_prime_table(t, str(path))
    raw = bytearray(path.read_bytes())
    raw[-1] ^= 0x40
    path.write_bytes(bytes(raw))
    with pytest.raises(ContractError):
        load_prime_table(str(path))
    path.write_bytes(b"XXXX" + bytes(raw[4:]))
    with pytest.raises(ContractError):
        load_prime_table(str(path))


def test_mertens_constant_trend():
    big = build_prime_table(10**5)
    vals = [(big.truncate(n).mu_geometric - 1.0) * big.truncate(n).log_pn for n in (10**3, 10**4, 10**5)]
    assert all(v < 0 for v in vals)
    dev = [abs(v + EULER_GAMMA) for v in vals]
    assert dev[0] > dev[1] > dev[2]
    assert dev[2] < 0.05


def test_bernoulli_mean_rate_bounded(table_1e5):
    for n in (10**3, 10**4, 10**5):
        t = table_1e5.truncate(n)
        assert abs(t.mu_bernoulli - 1.0) * math.log(n) < 2.0


def test_bernoulli_subtracted_term_rate(table_1e5):
    # E[X_I log p_I / log p_n] for the Bernoulli index law, exactly
    for n in (10**3, 10**4, 10**5):
        t = table_1e5.truncate(n)
        pi = np.diff(t.F_bern)
        q = 1.0 / (t.primes + 1.0)
        val = math.fsum(pi * q * t.logs / t.log_pn)
        assert val * math.log(n) ** 2 < 5.0


def test_n1_sample_laws():
    t = build_prime_table(1)
    b = sample_prime_sum(t, BernoulliPrime(), 300_000, 1).values
    assert set(np.unique(b)) <= {0.0, 1.0}
    assert abs(b.mean() - 1 / 3) <= 4 * math.sqrt(2 / 9 / b.size)

    g = sample_prime_sum(t, GeometricPrime(), 300_000, 2).values
    assert np.all(g == np.round(g))
    ks = np.arange(0, 12)
    obs = np.array([(g == k).sum() for k in ks] + [(g >= 12).sum()])
    expd = np.array([0.5 ** (k + 1) for k in ks] + [0.5**12]) * g.size
    assert stats.chisquare(obs, expd).pvalue > 1e-3

    p = sample_prime_sum(t, PoissonLogRatio(), 300_000, 3).values
    ks = np.arange(0, 7)
    obs = np.array([(p == k).sum() for k in ks] + [(p >= 7).sum()])
    expd = np.concatenate([stats.poisson.pmf(ks, 1.0), [stats.poisson.sf(6, 1.0)]]) * p.size
    assert stats.chisquare(obs, expd).pvalue > 1e-3


@pytest.mark.parametrize("marks", ALL_MARKS, ids=lambda m: m.tag)
def test_sample_mean_is_mu(marks):
    t = build_prime_table(2000)
    b = sample_prime_sum(t, marks, 200_000, 4)
    assert abs(b.mean() - mu_n(t, marks)) <= 4 * b.stderr()


@pytest.mark.parametrize("marks", ALL_MARKS, ids=lambda m: m.tag)
def test_prime_sum_matches_brute_force(marks):
    # dense draw of every mark for n = 30 as an independent oracle
    t = build_prime_table(30)
    m = 200_000
    g = np.random.default_rng(77)
    p = t.primes.astype(float)
    if isinstance(marks, GeometricPrime):
        x = g.geometric(1.0 - 1.0 / p, size=(m, 30)) - 1
    elif isinstance(marks, BernoulliPrime):
        x = g.random((m, 30)) < 1.0 / (p + 1.0)
    elif isinstance(marks, PoissonInvPrime):
        x = g.poisson(1.0 / (p + 1.0), size=(m, 30))
    else:
        x = g.poisson(1.0 - np.concatenate([[0.0], t.logs[:-1]]) / t.logs, size=(m, 30))
    dense = (x * t.logs).sum(axis=1) / t.log_pn
    ours = sample_prime_sum(t, marks, m, 5).values
    assert stats.ks_2samp(dense, ours).pvalue > 1e-3


def test_coupling_n1():
    t = build_prime_table(1)
    c = coupling_TU(t, GeometricPrime(), 200_000, 1)
    assert np.all(c.T == 1.0)
    assert abs(c.mean_abs - 0.5) <= 4 * c.stderr
    assert coupling_l1_exact(t, GeometricPrime()) == pytest.approx(0.5, abs=1e-15)


@pytest.mark.parametrize("marks", ALL_MARKS, ids=lambda m: m.tag)
def test_coupling_mc_matches_exact(marks):
    t = build_prime_table(10**4)
    c = coupling_TU(t, marks, 200_000, 2)
    assert abs(c.mean_abs - coupling_l1_exact(t, marks)) <= 4 * c.stderr
    assert c.U.min() >= 0 and c.U.max() < 1


def test_coupling_index_chi_square():
    t = build_prime_table(50)
    c = coupling_TU(t, GeometricPrime(), 400_000, 3)
    idx = np.searchsorted(t.logs / t.log_pn, c.T)  # T = log p_I / log p_n
    obs = np.bincount(idx, minlength=50)
    p = t.primes.astype(float)
    prob = t.logs / ((p - 1.0) * t.log_pn * t.mu_geometric)
    assert prob.sum() == pytest.approx(1.0, abs=1e-12)
    assert stats.chisquare(obs, prob * c.T.size).pvalue > 1e-3


def test_logratio_coupling_bound():
    for n in (10, 1000, 10**5):
        t = build_prime_table(n)
        assert coupling_l1_exact(t, PoissonLogRatio()) <= math.log(2) / t.log_pn


def test_remainder_cases():
    t1 = build_prime_table(1)
    assert remainder_envelope(t1) == pytest.approx(0.5, abs=1e-15)
    t = build_prime_table(10**4)
    r = remainder_term(t, lambda x: np.full_like(x, 3.0), 1000, 0)
    assert r.estimate == 0.0
    r = remainder_term(t, lambda x: np.sin(x) / 2, 200_000, 1)
    assert abs(r.estimate) <= r.envelope + 4 * r.stderr


def test_size_bias_enumeration_n1():
    t = build_prime_table(1)
    lhs, rhs = size_bias_enumerate(t, lambda x: x)
    assert lhs == pytest.approx(1 / 3, abs=1e-15)
    assert rhs == pytest.approx(1 / 3, abs=1e-15)


@pytest.mark.parametrize("n", [2, 5, 9])
def test_size_bias_enumeration_small_n(n):
    t = build_prime_table(n)
    for w in (identity(), sine(1.0), cosine(2.0), hinge(0.5)):
        lhs, rhs = size_bias_enumerate(t, w)
        assert lhs == pytest.approx(rhs, abs=1e-13)


def test_size_bias_constant_phi_geometric_n1():
    from dickman.witnesses import Witness

    const = Witness("c", lambda x: np.full_like(x, 2.0), np.zeros_like, np.zeros_like, 0.0, 0.0)
    t = build_prime_table(1)
    rep = size_bias_check(t, GeometricPrime(), 100_000, 3, phis=[const])
    lhs = rep.details["per_phi"]["c"]["lhs"]
    rhs = rep.details["per_phi"]["c"]["rhs"]
    assert rhs == pytest.approx(2.0 * t.mu_geometric, abs=0)  # remainder vanishes for constants
    assert rep.passed and abs(lhs - rhs) <= 5 * rep.details["per_phi"]["c"]["stderr"]


@pytest.mark.parametrize("marks", ALL_MARKS, ids=lambda m: m.tag)
def test_size_bias_check(marks):
    t = build_prime_table(1000)
    rep = size_bias_check(t, marks, 100_000, 5)
    assert rep.verdict == "pass"
    assert rep.claim_id == f"size-bias-{marks.tag}"


def test_size_bias_detects_wrong_mean():
    # feeding the Bernoulli table to a mismatched law must fail: S phi(S) vs (mu+0.1) phi(S+T)
    t = build_prime_table(1000)
    from dickman import primes as pr

    real = pr.mu_n
    try:
        pr.mu_n = lambda table, marks: real(table, marks) + 0.1
        rep = size_bias_check(t, BernoulliPrime(), 100_000, 6, phis=[identity().scaled(0.5)])
    finally:
        pr.mu_n = real
    assert rep.verdict == "fail"
