from __future__ import annotations

import csv
import json
import math

import pytest

from nr_sps import compare
from nr_sps.compare import (Crossover, find_crossover, metric, regime, summarize,
                            validate_curve)
from nr_sps.core import SpsConfig

BASE = SpsConfig()


@pytest.mark.parametrize("n_ue,n_se,expected", [
    (100, 1, "under_saturated"), (159, 1, "under_saturated"), (160, 1, "saturated"),
    (80, 2, "saturated"), (79, 2, "under_saturated"), (200, 1, "saturated"),
])
def test_regime(n_ue, n_se, expected):
    assert regime(BASE.with_(n_ue=n_ue, n_se=n_se)) == expected


def test_validate_curve_needs_three_replications():
    with pytest.raises(ValueError):
        validate_curve("p_k", [0.0], BASE, replications=2)
    with pytest.raises(ValueError):
        validate_curve("t_rri_ms", [100], BASE)


@pytest.fixture(scope="module")
def rows():
    return validate_curve("p_k", [0.0, 0.4, 0.8], BASE, "async", 3, 400, 0)


def test_rows_shape(rows):
    assert [r.value for r in rows] == [0.0, 0.4, 0.8]
    for r in rows:
        assert r.regime == "under_saturated" and not r.flagged
        assert set(r.deltas) == set(compare.METRICS)
        assert all(v >= 0 for v in r.sim_stderr.values())
        assert r.model.variant == "async_x"
        assert r.deltas["p_col"] == pytest.approx(abs(r.model.p_col - r.sim_mean["p_col"]))
        assert r.deltas["p_col"] < 0.03


def test_seeds_are_consecutive(rows):
    reps = compare.simulate_point(BASE.with_(p_k=0.0), "async", 3, 400, 0)
    assert [r.seed for r in reps] == [0, 1, 2]


def test_saturated_row_flagged():
    r = compare.compare_point(BASE.with_(n_ue=180), "async", 3, 100, 0)
    assert r.regime == "saturated" and r.flagged


def test_stderr_shrinks_with_budget():
    cfg = BASE.with_(n_ue=60)
    errs = []
    for rris in (100, 400, 1600):
        _, err = compare.aggregate(compare.simulate_point(cfg, "async", 4, rris, 100))
        errs.append(err["p_col"])
    assert errs[0] > errs[1] > errs[2]


def test_crossover_pk():
    x = find_crossover("p_col1", "p_col2", "p_k", (0.0, 0.8), BASE)
    assert x.found
    assert abs(x.value - 0.64) <= 0.05
    # tolerance 1e-3 on the axis
    lo = BASE.with_(p_k=x.value - 1e-3)
    hi = BASE.with_(p_k=x.value + 1e-3)
    f1, f2 = metric("p_col1"), metric("p_col2")
    assert (f1(lo) - f2(lo)) * (f1(hi) - f2(hi)) < 0


def test_crossover_prr_nse():
    x = find_crossover(metric("prr", n_se=1), metric("prr", n_se=2), "n_ue", (20, 200), BASE)
    assert x.found
    assert 60 < x.value < 100


def test_no_crossover():
    x = find_crossover("p_col", "p_col", "p_k", (0.0, 0.8), BASE)
    assert isinstance(x, Crossover) and not x.found and x.value is None
    x = find_crossover("p_col", "prr", "p_k", (0.0, 0.8), BASE)
    assert not x.found and "sign" in x.reason
    with pytest.raises(ValueError):
        find_crossover("p_col", "prr", "p_k", (0.8, 0.0), BASE)


def test_emitters(rows, tmp_path):
    path = tmp_path / "c.csv"
    compare.write_csv(rows, path)
    with open(path) as fh:
        data = list(csv.DictReader(fh))
    assert len(data) == 3
    assert list(data[0]) == compare.COMPARISON_COLUMNS
    x = {"pk": find_crossover("p_col1", "p_col2", "p_k", (0.0, 0.8), BASE)}
    summary = summarize(rows, x)
    assert summary["claims"]["under_saturated_p_col_within_0.03"]
    assert summary["crossovers"]["pk"]["found"]
    compare.write_summary(summary, tmp_path / "s.json")
    loaded = json.loads((tmp_path / "s.json").read_text())
    assert loaded["rows"] == 3
    assert math.isnan(summary["max_deltas_saturated"]["p_col"])
