"""Fixed-point solvers for the SPS MAC-collision / PRR model.

Four variants share one damped iteration over the pair
(collision probability, mean unoccupied PRBs):

* ``sync``      - counters change on a common RRI grid
* ``async``     - per-UE counter phase; overlap probability doubles
* ``async_nse`` - async with ``n_se`` duplicates per RRI
* ``async_x``   - async_nse plus the minimum-candidate proportion ``x_min``

The reselection binomial ranges over all ``n_ue`` UEs including the
reference one. Using ``n_ue - 1`` instead would be the natural alternative;
it shifts every curve slightly and is not done here.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

from .core import (C_GREATER, C_GREATER_PI0, C_LESS, C_LESS_PI0, SpsConfig,
                   stationary_distribution)

VARIANTS = ("sync", "async", "async_nse", "async_x")
SWEEP_AXES = ("p_k", "n_ue", "n_se", "x_min")

DAMPING = 0.5
TOL = 1e-10
MAX_ITER = 10_000
NA_FLOOR = 1.0


@dataclass(frozen=True)
class Event2Terms:
    e1: float
    e2: float
    e3: float


@dataclass(frozen=True)
class ModelSolution:
    variant: str
    cfg: SpsConfig
    p_col: float
    p_col1: float
    p_col2: float
    event2: Event2Terms
    n_a_bar: float
    n_o_bar: float
    n_cand_bar: float
    p_hd: float
    prr: float
    iterations: int
    converged: bool
    residual: float
    saturated: bool = False
    error: str | None = field(default=None, compare=False)

    def row(self) -> dict:
        c = self.cfg
        return {
            "variant": self.variant,
            "t_rri_ms": c.t_rri_ms, "slot_ms": c.slot_ms, "n_sc": c.n_sc,
            "n_ue": c.n_ue, "p_k": c.p_k, "n_se": c.n_se, "x_min": c.x_min,
            "p_col": self.p_col, "p_col1": self.p_col1, "p_col2": self.p_col2,
            "n_a_bar": self.n_a_bar, "p_hd": self.p_hd, "prr": self.prr,
            "converged": self.converged, "iterations": self.iterations,
        }


ROW_COLUMNS = ["variant", "t_rri_ms", "slot_ms", "n_sc", "n_ue", "p_k", "n_se",
               "x_min", "p_col", "p_col1", "p_col2", "n_a_bar", "p_hd", "prr",
               "converged", "iterations"]


class _Model:
    """Closed-form pieces for one config and overlap factor."""

    def __init__(self, cfg: SpsConfig, overlap: float, use_x: bool):
        self.cfg = cfg
        self.n_r = cfg.n_r
        self.pi0 = stationary_distribution(cfg.rc_min, cfg.rc_max).pi0
        # probability that another UE's selection window overlaps UE 0's
        self.q = overlap * self.pi0
        self.load = cfg.n_ue * cfg.n_se
        self.use_x = use_x
        self.x_nr = cfg.x_min * self.n_r
        pk, q = cfg.p_k, self.q
        self.f_e1 = q * pk * pk
        self.f_e2 = pk * (C_LESS_PI0 * q + C_LESS)
        self.f_e3 = pk * pk * (C_GREATER - C_GREATER_PI0 * q)
        # bracketed Event-2 factor, grouped exactly as printed
        self.f2 = q * pk**2 + pk * ((C_GREATER - C_GREATER_PI0 * q) * pk + C_LESS_PI0 * q + C_LESS)

    def n_occupied(self, p_col: float) -> float:
        ld, nc = self.load, self.cfg.nc_bar
        return ld - p_col * ld + p_col * ld / nc

    def n_available(self, p_col: float) -> float:
        return self.n_r - self.n_occupied(p_col)

    def reselect_collision(self, n_a: float) -> float:
        """Pr{collision | UE 0 reselects} among unoccupied PRBs."""
        c = self.cfg
        miss = (1.0 - 1.0 / n_a) ** c.n_se - 1.0
        return 1.0 - (1.0 + self.q * (1.0 - c.p_k) * miss) ** c.n_ue

    def p_col1(self, n_a: float) -> float:
        pk = self.cfg.p_k
        hit = self.reselect_collision(n_a)
        if self.use_x and n_a < self.x_nr:
            hit = hit * n_a / self.x_nr + 1.0 * (self.x_nr - n_a) / self.x_nr
        return (1.0 - pk) * hit

    def candidate(self, p_col: float) -> tuple[float, float]:
        n_a = max(self.n_available(p_col), NA_FLOOR)
        return self.p_col1(n_a) / (1.0 - self.f2), n_a


def _solve(cfg: SpsConfig, variant: str, overlap: float, use_x: bool,
           prr_form: str) -> ModelSolution:
    m = _Model(cfg, overlap, use_x)
    saturated = m.load >= m.n_r or m.n_available(0.0) <= 0
    p = 0.0
    residual = math.inf
    converged = False
    it = 0
    while it < MAX_ITER:
        it += 1
        cand, _ = m.candidate(p)
        cand = min(max(cand, 0.0), 1.0)
        residual = abs(cand - p)
        if residual < TOL:
            converged = True
            break
        p = DAMPING * p + (1.0 - DAMPING) * cand
    if not converged:
        # the N_a floor can make the damped map oscillate under overload;
        # cand(P) - P is continuous with a sign change on [0, 1]
        p, extra, residual, converged = _bisect(m)
        it += extra
    cand, n_a = m.candidate(p)
    p_col1 = m.p_col1(n_a)
    p_col2 = m.f2 * p
    ev2 = Event2Terms(m.f_e1 * p, m.f_e2 * p, m.f_e3 * p)
    if p_col1 + p_col2 > 1.0:
        saturated = True
    if m.n_available(p) <= 0:
        saturated = True
    p_hd = cfg.p_hd
    if prr_form == "single":
        prr = (1.0 - p) * (1.0 - p_hd)
    else:
        prr = 1.0 - (1.0 - (1.0 - p) * (1.0 - p_hd)) ** cfg.n_se
    n_cand = max(n_a, m.x_nr) if use_x else n_a
    return ModelSolution(
        variant=variant, cfg=cfg, p_col=p, p_col1=p_col1, p_col2=p_col2,
        event2=ev2, n_a_bar=n_a, n_o_bar=m.n_r - n_a, n_cand_bar=n_cand,
        p_hd=p_hd, prr=prr, iterations=it, converged=converged,
        residual=residual, saturated=saturated,
    )


def _bisect(m: _Model) -> tuple[float, int, float, bool]:
    g = lambda x: min(max(m.candidate(x)[0], 0.0), 1.0) - x
    lo, hi = 0.0, 1.0
    it = 0
    while hi - lo > 1e-15 and it < 200:
        it += 1
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            lo = mid
        else:
            hi = mid
    p = 0.5 * (lo + hi)
    residual = abs(g(p))
    return p, it, residual, residual < TOL


def solve_sync(cfg: SpsConfig) -> ModelSolution:
    """Synchronous counters: only simultaneous reselections overlap."""
    return _solve(cfg, "sync", 1.0, False, "single")


def solve_async_nse(cfg: SpsConfig) -> ModelSolution:
    """Asynchronous counters with ``cfg.n_se`` duplicates per RRI."""
    return _solve(cfg, "async_nse", 2.0, False, "duplicates")


def solve_async(cfg: SpsConfig) -> ModelSolution:
    """Asynchronous counters, one transmission per RRI.

    Shares the duplicate-aware code path with n_se forced to 1, so it is
    bit-identical to ``solve_async_nse`` at n_se=1.
    """
    sol = solve_async_nse(cfg if cfg.n_se == 1 else cfg.with_(n_se=1))
    return _relabel(sol, "async")


def solve_async_x(cfg: SpsConfig) -> ModelSolution:
    """Piecewise model: plain async_nse while the unoccupied count clears
    ``x_min * N_r``; otherwise UE 0 may be forced onto occupied PRBs."""
    base = solve_async_nse(cfg)
    if base.n_a_bar >= cfg.x_min * cfg.n_r:
        return _relabel(base, "async_x", n_cand=base.n_a_bar)
    return _solve(cfg, "async_x", 2.0, True, "duplicates")


def _relabel(sol: ModelSolution, variant: str, n_cand: float | None = None) -> ModelSolution:
    d = {k: getattr(sol, k) for k in sol.__dataclass_fields__}
    d["variant"] = variant
    if n_cand is not None:
        d["n_cand_bar"] = n_cand
    return ModelSolution(**d)


SOLVERS = {
    "sync": solve_sync,
    "async": solve_async,
    "async_nse": solve_async_nse,
    "async_x": solve_async_x,
}


def solve(cfg: SpsConfig, variant: str = "async") -> ModelSolution:
    try:
        solver = SOLVERS[variant]
    except KeyError:
        raise ValueError(f"unknown variant {variant!r}") from None
    return solver(cfg)


def _failed(cfg: SpsConfig | None, variant: str, err: Exception, template: SpsConfig) -> ModelSolution:
    nan = float("nan")
    return ModelSolution(
        variant=variant, cfg=cfg or template, p_col=nan, p_col1=nan, p_col2=nan,
        event2=Event2Terms(nan, nan, nan), n_a_bar=nan, n_o_bar=nan,
        n_cand_bar=nan, p_hd=(cfg or template).p_hd, prr=nan, iterations=0,
        converged=False, residual=nan, error=str(err),
    )


def sweep(template: SpsConfig, axis: str, values, variant: str = "async") -> list[ModelSolution]:
    """One solution per value of ``axis``; failed points carry converged=False."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"axis must be one of {SWEEP_AXES}")
    out = []
    for v in values:
        v = int(v) if axis in ("n_ue", "n_se") else float(v)
        cfg = None
        try:
            cfg = template.with_(**{axis: v})
            out.append(solve(cfg, variant))
        except (ValueError, ArithmeticError) as err:
            out.append(_failed(cfg, variant, err, template))
    return out


def fixed_point_residuals(sol: ModelSolution) -> tuple[float, float]:
    """Re-substitute (p_col, n_a_bar) into the variant's defining pair.

    Returns (|p_col - P(n_a_bar)|, |n_a_bar - N_a(p_col)|).
    """
    use_x = sol.variant == "async_x" and sol.n_cand_bar > sol.n_a_bar
    overlap = 1.0 if sol.variant == "sync" else 2.0
    m = _Model(sol.cfg, overlap, use_x)
    n_a = max(m.n_available(sol.p_col), NA_FLOOR)
    p = min(max(m.p_col1(sol.n_a_bar) / (1.0 - m.f2), 0.0), 1.0)
    return abs(sol.p_col - p), abs(sol.n_a_bar - n_a)


def as_dict(sol: ModelSolution) -> dict:
    d = sol.row()
    d["event2"] = asdict(sol.event2)
    d.update(n_o_bar=sol.n_o_bar, n_cand_bar=sol.n_cand_bar, residual=sol.residual,
             saturated=sol.saturated)
    return d
