"""Model-vs-simulation harness: matched runs, deltas, crossovers, emitters."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import analytic
from .analytic import ModelSolution
from .core import SpsConfig
from .sim import DEFAULT_WARMUP, SimReport, run

METRICS = ("p_col", "p_col1", "p_col2", "prr", "n_a")
SATURATION_FRACTION = 0.8

# agreement bands for the under-saturated regime
BANDS = {"p_col": 0.03, "prr": 0.02, "n_a": 5.0}

_MODEL_FIELD = {"p_col": "p_col", "p_col1": "p_col1", "p_col2": "p_col2",
                "prr": "prr", "n_a": "n_a_bar", "n_cand": "n_cand_bar"}
_SIM_FIELD = {"p_col": "p_col_hat", "p_col1": "p_col1_hat", "p_col2": "p_col2_hat",
              "prr": "prr_hat", "n_a": "n_a_hat", "n_cand": "n_cand_hat"}


def regime(cfg: SpsConfig) -> str:
    """``saturated`` once the offered load reaches 0.8 of the pool."""
    return "saturated" if cfg.n_ue * cfg.n_se >= SATURATION_FRACTION * cfg.n_r else "under_saturated"


def model_variant(mode: str) -> str:
    # async_x reduces to async_nse (and async) whenever padding is inactive
    return "sync" if mode == "sync" else "async_x"


_cache: dict[tuple, SimReport] = {}


def simulate_point(cfg: SpsConfig, mode: str, replications: int, rris: int,
                   seed0: int = 0, warmup: int = DEFAULT_WARMUP) -> list[SimReport]:
    """Reports for seeds seed0 .. seed0 + replications - 1 (memoised)."""
    out = []
    for seed in range(seed0, seed0 + replications):
        key = (cfg, mode, rris, warmup, seed)
        if key not in _cache:
            _cache[key] = run(cfg, mode, rris, warmup, seed)[1]
        out.append(_cache[key])
    return out


def clear_cache() -> None:
    _cache.clear()


def aggregate(reports: Sequence[SimReport]) -> tuple[dict, dict]:
    """Mean and standard error of each metric over replications."""
    mean, err = {}, {}
    for m, f in _SIM_FIELD.items():
        x = np.array([getattr(r, f) for r in reports], dtype=float)
        x = x[~np.isnan(x)]
        mean[m] = float(x.mean()) if x.size else math.nan
        err[m] = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
    hist: dict[int, float] = {}
    for r in reports:
        for k, v in r.nc_histogram.items():
            hist[k] = hist.get(k, 0.0) + v / len(reports)
    mean["nc_histogram"] = dict(sorted(hist.items()))
    return mean, err


@dataclass(frozen=True)
class ComparisonRow:
    axis: str
    value: float
    cfg: SpsConfig
    mode: str
    model: ModelSolution
    sim_mean: dict
    sim_stderr: dict
    deltas: dict
    regime: str
    replications: int
    rris: int
    seed0: int
    flagged: bool = False
    note: str = field(default="", compare=False)

    def row(self) -> dict:
        c = self.cfg
        d = {"axis": self.axis, "value": self.value, "mode": self.mode,
             "variant": self.model.variant, "regime": self.regime,
             "n_ue": c.n_ue, "p_k": c.p_k, "n_se": c.n_se, "x_min": c.x_min,
             "n_sc": c.n_sc, "t_rri_ms": c.t_rri_ms, "slot_ms": c.slot_ms}
        for m in METRICS:
            d[f"model_{m}"] = getattr(self.model, _MODEL_FIELD[m])
            d[f"sim_{m}"] = self.sim_mean[m]
            d[f"sim_{m}_stderr"] = self.sim_stderr[m]
            d[f"delta_{m}"] = self.deltas[m]
        d.update(replications=self.replications, rris=self.rris, seed0=self.seed0,
                 converged=self.model.converged, flagged=self.flagged)
        return d


COMPARISON_COLUMNS = (
    ["axis", "value", "mode", "variant", "regime", "n_ue", "p_k", "n_se", "x_min",
     "n_sc", "t_rri_ms", "slot_ms"]
    + [f"{p}_{m}{s}" for m in METRICS
       for p, s in (("model", ""), ("sim", ""), ("sim", "_stderr"), ("delta", ""))]
    + ["replications", "rris", "seed0", "converged", "flagged"]
)


def compare_point(cfg: SpsConfig, mode: str = "async", replications: int = 3,
                  rris: int = 2000, seed0: int = 0, warmup: int = DEFAULT_WARMUP,
                  axis: str = "", value: float = math.nan) -> ComparisonRow:
    sol = analytic.solve(cfg, model_variant(mode))
    mean, err = aggregate(simulate_point(cfg, mode, replications, rris, seed0, warmup))
    deltas = {m: abs(getattr(sol, _MODEL_FIELD[m]) - mean[m]) for m in METRICS}
    reg = regime(cfg)
    notes = []
    if not sol.converged:
        notes.append("model did not converge")
    if reg == "saturated":
        notes.append("outside model validity")
    return ComparisonRow(axis=axis, value=value, cfg=cfg, mode=mode, model=sol,
                         sim_mean=mean, sim_stderr=err, deltas=deltas, regime=reg,
                         replications=replications, rris=rris, seed0=seed0,
                         flagged=bool(notes), note="; ".join(notes))


def validate_curve(axis: str, values, cfg: SpsConfig, mode: str = "async",
                   replications: int = 3, rris: int = 2000, seed0: int = 0,
                   warmup: int = DEFAULT_WARMUP) -> list[ComparisonRow]:
    """One ComparisonRow per axis value."""
    if replications < 3:
        raise ValueError("replications must be >= 3")
    if axis not in analytic.SWEEP_AXES:
        raise ValueError(f"axis must be one of {analytic.SWEEP_AXES}")
    rows = []
    for v in values:
        v = int(v) if axis in ("n_ue", "n_se") else float(v)
        rows.append(compare_point(cfg.with_(**{axis: v}), mode, replications, rris,
                                  seed0, warmup, axis=axis, value=v))
    return rows


# -- crossovers -------------------------------------------------------------

Metric = Callable[[SpsConfig], float]


def metric(name: str, variant: str = "async_x", **overrides) -> Metric:
    """Analytic metric ``name`` (a ModelSolution field) under ``overrides``."""
    fld = _MODEL_FIELD.get(name, name)

    def f(cfg: SpsConfig) -> float:
        return float(getattr(analytic.solve(cfg.with_(**overrides), variant), fld))
    f.__name__ = name
    return f


@dataclass(frozen=True)
class Crossover:
    found: bool
    value: float | None
    bracket: tuple[float, float]
    iterations: int
    reason: str = ""


def find_crossover(metric_a: Metric | str, metric_b: Metric | str, axis: str,
                   bracket: tuple[float, float], cfg: SpsConfig,
                   tol: float = 1e-3) -> Crossover:
    """Bisection for metric_a == metric_b along ``axis``.

    Integer axes (n_ue) are treated as real-valued; the analytic maps are
    smooth in them.
    """
    fa = metric(metric_a) if isinstance(metric_a, str) else metric_a
    fb = metric(metric_b) if isinstance(metric_b, str) else metric_b
    lo, hi = float(bracket[0]), float(bracket[1])
    if not lo < hi:
        raise ValueError("bracket must satisfy lo < hi")

    def g(x: float) -> float:
        c = cfg.with_(**{axis: x})
        return fa(c) - fb(c)

    glo, ghi = g(lo), g(hi)
    if glo == 0.0 and ghi == 0.0:
        return Crossover(False, None, (lo, hi), 0, "metrics identical at both ends")
    if glo == 0.0:
        return Crossover(True, lo, (lo, hi), 0)
    if ghi == 0.0:
        return Crossover(True, hi, (lo, hi), 0)
    if np.sign(glo) == np.sign(ghi):
        return Crossover(False, None, (lo, hi), 0, "no sign change in bracket")
    it = 0
    a, b = lo, hi
    while b - a > tol:
        it += 1
        mid = 0.5 * (a + b)
        gm = g(mid)
        if gm == 0.0:
            a = b = mid
            break
        if np.sign(gm) == np.sign(glo):
            a, glo = mid, gm
        else:
            b = mid
    return Crossover(True, 0.5 * (a + b), (lo, hi), it)


# -- emitters ---------------------------------------------------------------

def max_deltas(rows: Sequence[ComparisonRow], regime_name: str = "under_saturated") -> dict:
    sel = [r for r in rows if r.regime == regime_name]
    return {m: max((r.deltas[m] for r in sel if not math.isnan(r.deltas[m])), default=math.nan)
            for m in METRICS}


def summarize(rows: Sequence[ComparisonRow], crossovers: dict | None = None) -> dict:
    """Pass/fail per agreement band, max deltas and crossover values."""
    md = max_deltas(rows)
    claims = {f"under_saturated_{m}_within_{BANDS[m]}": bool(md[m] <= BANDS[m])
              for m in BANDS if not math.isnan(md[m])}
    sat = [r for r in rows if r.regime == "saturated"]
    if sat:
        claims["saturated_model_p_col_ge_sim"] = all(
            r.model.p_col >= r.sim_mean["p_col"] for r in sat)
    out = {"claims": claims, "max_deltas": md,
           "max_deltas_saturated": max_deltas(rows, "saturated"),
           "rows": len(rows), "flagged": sum(r.flagged for r in rows)}
    if crossovers:
        out["crossovers"] = {k: {"found": c.found, "value": c.value, "reason": c.reason}
                             for k, c in crossovers.items()}
    return out


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_csv(rows: Sequence[ComparisonRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=COMPARISON_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.row().items()})


def write_summary(summary: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")
