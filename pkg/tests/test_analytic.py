from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nr_sps import analytic
from nr_sps.analytic import (fixed_point_residuals, solve, solve_async, solve_async_nse,
                             solve_async_x, solve_sync, sweep)
from nr_sps.core import SpsConfig

PI0 = 1 / 11
BASE = SpsConfig()


def sync_oracle(n_ue=100, n_r=200, nc=2.0):
    """Plain iteration of the p_k=0 synchronous pair, written out by hand."""
    p = 0.0
    for _ in range(10_000):
        n_a = n_r - n_ue + (nc - 1) / nc * p * n_ue
        p_new = 1 - (1 - PI0 / n_a) ** n_ue
        if abs(p_new - p) < 1e-14:
            break
        p = p_new
    return p, n_a


def test_sync_default_value():
    s = solve_sync(BASE)
    p, n_a = sync_oracle()
    assert s.p_col == pytest.approx(0.084, abs=0.002)
    assert s.p_col == pytest.approx(p, abs=1e-9)
    assert s.n_a_bar == pytest.approx(n_a, abs=1e-6)
    assert s.p_col2 == 0.0
    assert s.converged


def test_sync_window_monte_carlo():
    # one synchronous selection window at the solved n_a: every other UE joins
    # with probability pi0 and picks uniformly among floor(n_a) free PRBs
    s = solve_sync(BASE)
    rng = np.random.default_rng(5)
    n_a = int(round(s.n_a_bar))
    trials = 200_000
    joiners = rng.binomial(100, PI0, size=trials)
    p_hit = 1 - (1 - 1 / n_a) ** joiners
    assert p_hit.mean() == pytest.approx(s.p_col, abs=0.003)


def test_sync_event2_ratio_at_high_pk():
    s = solve_sync(BASE.with_(p_k=0.8))
    ratio = PI0 * 0.64 + 0.8 * ((0.7851 - 0.3306 * PI0) * 0.8 + 0.2892 * PI0 + 0.1653)
    assert s.p_col2 / s.p_col == pytest.approx(ratio, abs=1e-12)


@pytest.mark.parametrize("solver", [solve_sync, solve_async, solve_async_nse, solve_async_x])
@pytest.mark.parametrize("n_ue", [1, 20, 100, 180])
def test_zero_pk_has_no_event2(solver, n_ue):
    s = solver(BASE.with_(n_ue=n_ue))
    assert s.p_col2 == 0.0
    assert s.event2.e1 == s.event2.e2 == s.event2.e3 == 0.0


def test_async_above_sync():
    assert solve_async(BASE).p_col > solve_sync(BASE).p_col


def test_async_decreasing_in_pk():
    vals = [solve_async(BASE.with_(p_k=pk)).p_col for pk in np.arange(0, 0.81, 0.2)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_async_event_crossover_near_064():
    grid = np.linspace(0, 0.8, 801)
    d = [solve_async(BASE.with_(p_k=float(p))).p_col1 - solve_async(BASE.with_(p_k=float(p))).p_col2
         for p in grid]
    idx = np.flatnonzero(np.diff(np.sign(d)))
    assert idx.size == 1
    assert abs(grid[idx[0]] - 0.64) <= 0.05


def test_async_default_value():
    assert solve_async(BASE).p_col == pytest.approx(0.1554, abs=1e-3)


def test_nse1_bit_identical():
    for pk in (0.0, 0.3, 0.8):
        for n in (20, 100, 200):
            c = BASE.with_(p_k=pk, n_ue=n)
            a, b = solve_async(c), solve_async_nse(c)
            assert (a.p_col, a.p_col1, a.p_col2, a.n_a_bar, a.prr, a.iterations) == \
                (b.p_col, b.p_col1, b.p_col2, b.n_a_bar, b.prr, b.iterations)


def test_nse_load_scaling():
    p1 = solve_async_nse(BASE.with_(n_ue=80)).p_col
    p2 = solve_async_nse(BASE.with_(n_ue=40, n_se=2)).p_col
    assert p1 == pytest.approx(0.1, abs=0.02)
    assert p2 == pytest.approx(0.1, abs=0.02)
    assert p2 == pytest.approx(p1, abs=0.02)


def test_nse_doubling_at_60():
    p1 = solve_async_nse(BASE.with_(n_ue=60)).p_col
    p2 = solve_async_nse(BASE.with_(n_ue=60, n_se=2)).p_col
    assert p2 == pytest.approx(0.2, abs=0.02)
    # at least twice; the model gives about 2.8x here
    assert p2 >= 2 * p1


def test_nse_prr_form():
    c = BASE.with_(n_ue=60, n_se=2)
    s = solve_async_nse(c)
    assert s.prr == pytest.approx(1 - (1 - (1 - s.p_col) * 0.99) ** 2, abs=1e-15)


@pytest.mark.parametrize("n_ue", [20, 60, 100, 120])
def test_x_first_branch(n_ue):
    c = BASE.with_(n_ue=n_ue, x_min=0.2)
    a, b = solve_async_x(c), solve_async_nse(c)
    assert a.p_col == b.p_col and a.n_a_bar == b.n_a_bar and a.prr == b.prr
    assert a.n_a_bar >= 40


@pytest.mark.parametrize("n_ue", [10, 20, 40])
def test_x08_equals_x02_at_low_load(n_ue):
    a = solve_async_x(BASE.with_(n_ue=n_ue, x_min=0.8))
    b = solve_async_x(BASE.with_(n_ue=n_ue, x_min=0.2))
    assert a.p_col == b.p_col


def test_x08_higher_at_100():
    a = solve_async_x(BASE.with_(n_ue=100, x_min=0.8))
    b = solve_async_x(BASE.with_(n_ue=100, x_min=0.2))
    assert a.p_col > b.p_col
    assert a.n_cand_bar == pytest.approx(160.0)
    assert a.n_a_bar < 160


def test_x_blend_by_hand():
    c = BASE.with_(n_ue=100, x_min=0.8)
    s = solve_async_x(c)
    n_a = 200 - 100 + 0.5 * s.p_col * 100
    hit = 1 - (1 + 2 * PI0 * ((1 - 1 / n_a) - 1)) ** 100
    p = hit * n_a / 160 + (160 - n_a) / 160
    assert s.p_col == pytest.approx(p, abs=1e-9)
    assert s.n_a_bar == pytest.approx(n_a, abs=1e-6)


def test_sweep_pk():
    sols = sweep(BASE, "p_k", [round(0.1 * i, 1) for i in range(9)])
    assert len(sols) == 9
    p = [s.p_col for s in sols]
    assert all(a > b for a, b in zip(p, p[1:]))


def test_sweep_nue():
    sols = sweep(BASE, "n_ue", range(20, 201, 20))
    assert len(sols) == 10
    p = [s.p_col for s in sols]
    assert all(a < b for a, b in zip(p, p[1:]))
    assert [s.cfg.n_ue for s in sols] == list(range(20, 201, 20))


def test_sweep_empty_and_failures():
    assert sweep(BASE, "p_k", []) == []
    sols = sweep(BASE, "p_k", [0.2, 0.95, 0.4])
    assert [s.converged for s in sols] == [True, False, True]
    assert math.isnan(sols[1].p_col) and sols[1].error
    with pytest.raises(ValueError):
        sweep(BASE, "n_sc", [1])


def test_unknown_variant():
    with pytest.raises(ValueError):
        solve(BASE, "lte")


@pytest.mark.parametrize("variant", analytic.VARIANTS)
def test_single_ue_limit(variant):
    for pk in (0.0, 0.5):
        s = solve(BASE.with_(n_ue=1, p_k=pk), variant)
        q = PI0 if variant == "sync" else 2 * PI0
        expect = (1 - pk) * (1 - (1 - q * (1 - pk) / s.n_a_bar))
        assert s.p_col1 == pytest.approx(expect, rel=1e-9)
        assert s.p_col1 > 0


def test_large_pool_drives_pcol_to_zero():
    vals = [solve_async(BASE.with_(t_rri_ms=t, n_ue=20)).p_col for t in (100, 1000, 10000)]
    assert vals[0] > vals[1] > vals[2]
    assert vals[2] < 1e-3


def test_saturated_flag():
    s = solve_async_nse(BASE.with_(n_ue=150, n_se=2))
    assert s.saturated
    assert s.n_a_bar >= analytic.NA_FLOOR
    assert not solve_async(BASE).saturated


@pytest.mark.parametrize("variant", analytic.VARIANTS)
def test_overloaded_pool_is_flagged(variant):
    s = solve(BASE.with_(n_ue=210, n_se=2, p_k=0.5), variant)
    assert s.saturated
    assert 0 <= s.p_col <= 1


cfg_strategy = st.builds(
    SpsConfig,
    n_ue=st.integers(1, 200),
    p_k=st.floats(0, 0.8),
    n_se=st.integers(1, 2),
    x_min=st.floats(0.2, 1.0),
)


@settings(max_examples=150, deadline=None)
@given(cfg_strategy, st.sampled_from(analytic.VARIANTS))
def test_closure_and_residual(cfg, variant):
    s = solve(cfg, variant)
    assert s.converged
    assert abs(s.p_col1 + s.p_col2 - s.p_col) < 1e-9
    e = s.event2
    assert abs(e.e1 + e.e2 + e.e3 - s.p_col2) < 1e-12
    r_p, r_na = fixed_point_residuals(s)
    assert r_p < 1e-9 and r_na < 1e-9
    assert 0 <= s.p_col <= 1 and 0 <= s.prr <= 1
    assert s.p_hd == cfg.slot_ms / cfg.t_rri_ms
    assert s.prr <= 1 - s.p_hd ** cfg.n_se + 1e-15
    assert abs(s.n_a_bar + s.n_o_bar - cfg.n_r) < 1e-9


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 120), st.floats(0, 0.7), st.sampled_from(["sync", "async", "async_x"]))
def test_monotonicity(n_ue, p_k, variant):
    c = BASE.with_(n_ue=n_ue, p_k=p_k)
    p = solve(c, variant).p_col
    assert solve(c.with_(p_k=p_k + 0.1), variant).p_col <= p + 1e-12
    assert solve(c.with_(n_ue=n_ue + 1), variant).p_col >= p - 1e-12
    assert solve(c.with_(n_se=2), variant).p_col >= p - 1e-12
    assert solve(c.with_(x_min=0.8), variant).p_col >= p - 1e-12


def test_prr_single_ue_pair_forms():
    s = solve_sync(BASE)
    assert s.prr == pytest.approx((1 - s.p_col) * 0.99, abs=1e-15)
    assert s.prr <= 0.99


def test_row_schema():
    row = solve_async(BASE).row()
    assert list(row) == analytic.ROW_COLUMNS
    d = analytic.as_dict(solve_async(BASE))
    assert set(d["event2"]) == {"e1", "e2", "e3"}
