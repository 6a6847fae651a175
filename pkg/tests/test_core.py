from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nr_sps.core import (C_GREATER, C_GREATER_PI0, C_LESS, C_LESS_PI0, ConfigError, Prb,
                         RcDistribution, SpsConfig, draw_rc_init, pool_size,
                         rc_order_probabilities, simulate_counter_chain,
                         stationary_distribution)


def chain_oracle(lo, hi):
    """Stationary law from the transition matrix's left eigenvector."""
    n = hi + 1
    P = np.zeros((n, n))
    P[0, lo:hi + 1] = 1.0 / (hi - lo + 1)
    for i in range(1, n):
        P[i, i - 1] = 1.0
    w, v = np.linalg.eig(P.T)
    x = np.real(v[:, np.argmin(np.abs(w - 1))])
    return x / x.sum()


@pytest.mark.parametrize("t_rri,t_s,n_sc,expected", [
    (100, 1, 2, 200), (100, 100, 1, 1), (100, 0.5, 2, 400), (100, 0.125, 1, 800),
])
def test_pool_size(t_rri, t_s, n_sc, expected):
    cfg = SpsConfig(t_rri_ms=t_rri, slot_ms=t_s, n_sc=n_sc)
    assert pool_size(cfg) == expected
    assert isinstance(pool_size(cfg), int)


def test_pool_rejects_non_multiple():
    with pytest.raises(ConfigError):
        SpsConfig(t_rri_ms=100, slot_ms=0.3)


@pytest.mark.parametrize("kw", [
    dict(t_rri_ms=0), dict(slot_ms=-1), dict(p_k=0.81), dict(p_k=-0.1), dict(x_min=0.1),
    dict(x_min=1.01), dict(n_se=0), dict(n_ue=0), dict(nc_bar=1.5), dict(n_sc=0),
    dict(rc_min=6, rc_max=5),
])
def test_config_invariants(kw):
    with pytest.raises(ConfigError):
        SpsConfig(**kw)


@given(st.integers(1, 8), st.sampled_from([1.0, 0.5, 0.25, 0.125]))
def test_pool_size_multiplicative(n_sc, t_s):
    base = pool_size(SpsConfig(slot_ms=t_s, n_sc=n_sc))
    assert pool_size(SpsConfig(slot_ms=t_s, n_sc=2 * n_sc)) == 2 * base
    assert pool_size(SpsConfig(slot_ms=t_s / 2, n_sc=n_sc)) == 2 * base


@given(st.integers(0, 99), st.integers(0, 3))
def test_prb_index_roundtrip(slot, sc):
    p = Prb(slot, sc)
    idx = p.index(4)
    assert 0 <= idx < 400
    assert Prb.from_index(idx, 4) == p


def test_stationary_default():
    d = stationary_distribution(5, 15)
    assert len(d) == 16
    assert d.pi0 == 1 / 11
    assert d[15] == pytest.approx(1 / 121, abs=1e-15)
    assert all(d[i] == d.pi0 for i in range(5))
    assert sum(d.probabilities) == pytest.approx(1.0, abs=1e-12)
    assert d.balance_residuals().max() < 1e-12


def test_stationary_two_state():
    d = stationary_distribution(1, 1)
    assert d.probabilities == (0.5, 0.5)


@pytest.mark.parametrize("lo,hi", [(5, 15), (1, 1), (1, 3), (2, 9), (10, 10)])
def test_stationary_matches_eigen_oracle(lo, hi):
    d = stationary_distribution(lo, hi)
    np.testing.assert_allclose(d.probabilities, chain_oracle(lo, hi), atol=1e-12)
    assert d.balance_residuals().max() < 1e-12


def test_stationary_rejects_bad_bounds():
    with pytest.raises(ValueError):
        stationary_distribution(0, 3)
    with pytest.raises(ValueError):
        RcDistribution((0.5, 0.6))


def test_rc_order_enumeration():
    d = stationary_distribution()
    o = rc_order_probabilities(d)
    # exact rationals: pi_i = (16 - i)/121 on the tail
    pi = [Fraction(11, 121)] * 5 + [Fraction(16 - i, 121) for i in range(5, 16)]
    eq = sum(Fraction(1, 11) * pi[i] for i in range(5, 16))
    less = sum(Fraction(1, 11) * sum(pi[j] for j in range(i + 1, 16)) for i in range(5, 16))
    assert eq == Fraction(6, 121)
    assert o.p_equal == pytest.approx(float(eq), abs=1e-12)
    assert o.p_less == pytest.approx(float(less), abs=1e-12)
    assert o.total == pytest.approx(1.0, abs=1e-12)


def test_rc_order_closed_forms():
    o = rc_order_probabilities(stationary_distribution())
    pi0 = 1 / 11
    assert o.model_equal == pi0
    assert o.model_less == pytest.approx(C_LESS_PI0 * pi0 + C_LESS)
    assert o.model_greater == pytest.approx(C_GREATER - C_GREATER_PI0 * pi0)
    assert o.model_total == pytest.approx(1.0375, abs=1e-3)
    # the constant terms coincide with the enumerated strict orderings
    assert o.p_less == pytest.approx(C_LESS, abs=1e-4)
    assert o.p_greater == pytest.approx(C_GREATER, abs=1e-4)


def test_draw_rc_init_uniform():
    rng = np.random.default_rng(1)
    x = draw_rc_init(rng, size=1_000_000)
    assert x.min() == 5 and x.max() == 15
    assert abs(x.mean() - 10) < 0.01
    freq = np.bincount(x, minlength=16)[5:] / x.size
    assert np.all(np.abs(freq - 1 / 11) < 0.002)
    assert 5 <= int(draw_rc_init(np.random.default_rng(0))) <= 15


def test_draw_rc_init_reproducible():
    a = draw_rc_init(np.random.default_rng(42), size=10)
    b = draw_rc_init(np.random.default_rng(42), size=10)
    assert np.array_equal(a, b)


def test_counter_chain_monte_carlo():
    freq = simulate_counter_chain(np.random.default_rng(3), 1_000_000)
    pi = np.asarray(stationary_distribution().probabilities)
    assert np.abs(freq - pi).max() < 0.005


def test_config_with_and_fields():
    c = SpsConfig().with_(n_ue=10)
    assert c.n_ue == 10 and c.n_r == 200 and c.p_hd == 0.01
    assert "x_min" in SpsConfig.field_names()
