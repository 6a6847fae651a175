"""Shared domain types: scenario config, resource pool, reselection counter chain."""
from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from fractions import Fraction

import numpy as np

# Ordering constants used by the Event-2 terms of the collision model.
# Stored verbatim; see rc_order_probabilities for the enumerated counterparts.
C_GREATER = 0.7851
C_GREATER_PI0 = 0.3306
C_LESS_PI0 = 0.2892
C_LESS = 0.1653


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SpsConfig:
    t_rri_ms: float = 100.0
    slot_ms: float = 1.0
    n_sc: int = 2
    n_ue: int = 100
    p_k: float = 0.0
    n_se: int = 1
    x_min: float = 0.2
    rc_min: int = 5
    rc_max: int = 15
    nc_bar: float = 2.0

    def __post_init__(self):
        if self.t_rri_ms <= 0 or self.slot_ms <= 0:
            raise ConfigError("t_rri_ms and slot_ms must be positive")
        _slots_per_rri(self.t_rri_ms, self.slot_ms)
        if self.n_sc < 1:
            raise ConfigError("n_sc must be >= 1")
        if self.n_ue < 1:
            raise ConfigError("n_ue must be >= 1")
        if not 0.0 <= self.p_k <= 0.8:
            raise ConfigError(f"p_k={self.p_k} outside [0, 0.8]")
        if self.n_se < 1:
            raise ConfigError("n_se must be >= 1")
        if not 0.2 <= self.x_min <= 1.0:
            raise ConfigError(f"x_min={self.x_min} outside [0.2, 1]")
        if not 0 < self.rc_min <= self.rc_max:
            raise ConfigError("need 0 < rc_min <= rc_max")
        if self.nc_bar < 2:
            raise ConfigError("nc_bar must be >= 2")

    @property
    def slots_per_rri(self) -> int:
        return _slots_per_rri(self.t_rri_ms, self.slot_ms)

    @property
    def n_r(self) -> int:
        return pool_size(self)

    @property
    def p_hd(self) -> float:
        return self.slot_ms / self.t_rri_ms

    def with_(self, **changes) -> SpsConfig:
        return replace(self, **changes)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def _slots_per_rri(t_rri_ms: float, slot_ms: float) -> int:
    # Fraction(str(.)) keeps 0.5/0.25/0.125 ms numerologies exact
    ratio = Fraction(str(t_rri_ms)) / Fraction(str(slot_ms))
    if ratio.denominator != 1:
        raise ConfigError(f"t_rri_ms={t_rri_ms} is not a multiple of slot_ms={slot_ms}")
    return int(ratio)


@dataclass(frozen=True, order=True)
class Prb:
    slot: int
    subchannel: int

    def index(self, n_sc: int) -> int:
        return self.slot * n_sc + self.subchannel

    @classmethod
    def from_index(cls, idx: int, n_sc: int) -> Prb:
        return cls(int(idx) // n_sc, int(idx) % n_sc)


def pool_size(cfg: SpsConfig) -> int:
    """Number of PRBs in one RRI: slots per RRI times subchannels."""
    return cfg.slots_per_rri * cfg.n_sc


@dataclass(frozen=True)
class RcDistribution:
    probabilities: tuple[float, ...]
    rc_min: int = 5
    rc_max: int = 15

    def __post_init__(self):
        p = np.asarray(self.probabilities)
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("not a probability vector")

    @property
    def pi0(self) -> float:
        return self.probabilities[0]

    def __getitem__(self, i: int) -> float:
        return self.probabilities[i]

    def __len__(self) -> int:
        return len(self.probabilities)

    def balance_residuals(self) -> np.ndarray:
        """Per-state residual of the counter-chain balance recurrence."""
        p = np.asarray(self.probabilities)
        lo, hi = self.rc_min, self.rc_max
        w = p[0] / (hi - lo + 1)
        expected = np.empty_like(p)
        expected[:lo] = p[0]
        for i in range(lo, hi):
            expected[i] = w + p[i + 1]
        expected[hi] = w
        return np.abs(p - expected)


def stationary_distribution(rc_min: int = 5, rc_max: int = 15) -> RcDistribution:
    """Stationary law of the counter sampled once per RRI.

    State 0 jumps to a uniform draw in [rc_min, rc_max]; every other state
    decrements. Solved in closed form with exact rationals.
    """
    if not 0 < rc_min <= rc_max:
        raise ValueError("need 0 < rc_min <= rc_max")
    width = rc_max - rc_min + 1
    # unnormalised with pi_0 = 1
    rel = [Fraction(1)] * rc_min
    tail = [Fraction(0)] * width
    tail[-1] = Fraction(1, width)
    for k in range(width - 2, -1, -1):
        tail[k] = Fraction(1, width) + tail[k + 1]
    rel += tail
    total = sum(rel)
    return RcDistribution(tuple(float(r / total) for r in rel), rc_min, rc_max)


@dataclass(frozen=True)
class RcOrder:
    p_equal: float
    p_less: float
    p_greater: float
    model_equal: float
    model_less: float
    model_greater: float

    @property
    def total(self) -> float:
        return self.p_equal + self.p_less + self.p_greater

    @property
    def model_total(self) -> float:
        return self.model_equal + self.model_less + self.model_greater


def rc_order_probabilities(dist: RcDistribution) -> RcOrder:
    """Order statistics of a fresh counter draw vs. a stationary counter.

    The enumerated values come from the joint law of UE 0's uniform initial
    counter and UE 1's stationary counter. The ``model_*`` fields are the
    closed forms used by the analytic solvers, evaluated at pi_0, and are
    returned for side-by-side comparison only.
    """
    p = np.asarray(dist.probabilities)
    lo, hi = dist.rc_min, dist.rc_max
    w = 1.0 / (hi - lo + 1)
    eq = less = greater = 0.0
    for i in range(lo, hi + 1):
        for j, pj in enumerate(p):
            if i == j:
                eq += w * pj
            elif i < j:
                less += w * pj
            else:
                greater += w * pj
    pi0 = dist.pi0
    return RcOrder(
        p_equal=eq,
        p_less=less,
        p_greater=greater,
        model_equal=pi0,
        model_less=C_LESS_PI0 * pi0 + C_LESS,
        model_greater=C_GREATER - C_GREATER_PI0 * pi0,
    )


def draw_rc_init(rng: np.random.Generator, rc_min: int = 5, rc_max: int = 15, size=None):
    """Uniform integer draw on [rc_min, rc_max]."""
    return rng.integers(rc_min, rc_max + 1, size=size)


def simulate_counter_chain(rng: np.random.Generator, n_rri: int, rc_min: int = 5,
                           rc_max: int = 15) -> np.ndarray:
    """Empirical state frequencies of one counter trajectory over n_rri RRIs."""
    # one full cycle visits 0 then r, r-1, ..., 1: length r + 1
    counts = np.zeros(rc_max + 1, dtype=np.int64)
    n_cycles = int(math.ceil(n_rri / (rc_min + 1))) + 1
    draws = draw_rc_init(rng, rc_min, rc_max, size=n_cycles)
    seq = np.concatenate([np.r_[0, np.arange(r, 0, -1)] for r in draws])[:n_rri]
    counts += np.bincount(seq, minlength=rc_max + 1)
    return counts / counts.sum()
