"""Slot-granular SPS simulator (fully connected network, perfect PHY).

Time is measured in absolute slots. UE ``u`` has an RRI boundary at every
``k * L + phase[u]`` (``L`` = slots per RRI); ``k`` is the UE-local RRI
index. A PRB is a (slot-within-RRI, subchannel) cell of the periodic grid,
so a grant on slot ``s`` is used once per UE-RRI, at the unique absolute
slot congruent to ``s`` inside it.

Sensing is idealised: a UE selecting at time ``T`` sees, for each other UE,
the grant that UE held at ``T - L`` (the start of its sensing window). A
freshly selected grant therefore stays invisible while its selection window
is open, and two UEs whose windows overlap can pick the same PRB. The
selecting UE's own current PRBs are excluded from its candidate set.

Counters are sampled once per UE-RRI: a value of 0 marks the selection
window, and the RRI after it starts a fresh draw in [rc_min, rc_max].
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .core import Prb, SpsConfig, draw_rc_init, stationary_distribution

MODES = ("sync", "async")
DEFAULT_WARMUP = 20

EVENT_CLASSES = ("none", "event1", "event2_e1", "event2_e2", "event2_e3", "carryover")
NONE, EVENT1, E2_E1, E2_E2, E2_E3, CARRYOVER = range(6)


class TraceError(ValueError):
    pass


class SaturationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class UeState:
    rc: int
    reserved: tuple[Prb, ...]
    phase: int


@dataclass(frozen=True)
class TxRecord:
    ue: int
    rri_index: int
    prb: Prb
    collided: bool
    n_c: int
    event_class: str
    time_slot: int
    dup: int = 0


@dataclass(frozen=True)
class ReselectionRecord:
    ue: int
    rri_index: int
    kept: bool
    n_available_unoccupied: int
    n_candidates: int
    time_slot: int
    grant: tuple[Prb, ...] = ()


@dataclass
class Trace:
    """Columnar trace. Row ``i`` of the ``tx_*`` arrays is one transmission,
    row ``i`` of the ``rs_*`` arrays one selection-window event."""

    cfg: SpsConfig
    mode: str
    phases: np.ndarray
    rri_count: int
    warmup_rris: int
    seed: int | None
    tx_ue: np.ndarray
    tx_rri: np.ndarray
    tx_dup: np.ndarray
    tx_prb: np.ndarray
    tx_time: np.ndarray
    rs_ue: np.ndarray
    rs_rri: np.ndarray
    rs_time: np.ndarray
    rs_kept: np.ndarray  # (n, n_se) per-duplicate keep flags
    rs_n_avail: np.ndarray
    rs_n_cand: np.ndarray
    rs_grant: np.ndarray  # (n, n_se) PRB indices in force after the window
    _ann: _Annotation | None = field(default=None, repr=False)

    @property
    def n_ue(self) -> int:
        return len(self.phases)

    @property
    def slots_per_rri(self) -> int:
        return self.cfg.slots_per_rri

    def annotation(self) -> _Annotation:
        if self._ann is None:
            self._ann = _annotate(self)
        return self._ann

    def tx_records(self) -> Iterator[TxRecord]:
        ann = self.annotation()
        n_sc = self.cfg.n_sc
        for i in range(len(self.tx_ue)):
            yield TxRecord(
                ue=int(self.tx_ue[i]), rri_index=int(self.tx_rri[i]),
                prb=Prb.from_index(self.tx_prb[i], n_sc),
                collided=bool(ann.collided[i]), n_c=int(ann.n_c[i]),
                event_class=EVENT_CLASSES[ann.tx_class[i]],
                time_slot=int(self.tx_time[i]), dup=int(self.tx_dup[i]),
            )

    def reselection_records(self) -> Iterator[ReselectionRecord]:
        n_sc = self.cfg.n_sc
        for i in range(len(self.rs_ue)):
            yield ReselectionRecord(
                ue=int(self.rs_ue[i]), rri_index=int(self.rs_rri[i]),
                kept=bool(self.rs_kept[i].all()),
                n_available_unoccupied=int(self.rs_n_avail[i]),
                n_candidates=int(self.rs_n_cand[i]), time_slot=int(self.rs_time[i]),
                grant=tuple(Prb.from_index(p, n_sc) for p in self.rs_grant[i]),
            )

    def write_jsonl(self, path) -> None:
        """One JSON object per line; ``type`` is ``tx`` or ``reselection``."""
        with open(path, "w") as fh:
            for r in self.reselection_records():
                fh.write(json.dumps({
                    "type": "reselection", "ue": r.ue, "rri_index": r.rri_index,
                    "time_slot": r.time_slot, "kept": r.kept,
                    "n_available_unoccupied": r.n_available_unoccupied,
                    "n_candidates": r.n_candidates,
                    "grant": [[p.slot, p.subchannel] for p in r.grant],
                }) + "\n")
            for t in self.tx_records():
                fh.write(json.dumps({
                    "type": "tx", "ue": t.ue, "rri_index": t.rri_index, "dup": t.dup,
                    "time_slot": t.time_slot, "slot": t.prb.slot,
                    "subchannel": t.prb.subchannel, "collided": t.collided,
                    "n_c": t.n_c, "event_class": t.event_class,
                }) + "\n")

    @classmethod
    def from_records(cls, cfg: SpsConfig, phases, txs, reselections, *, mode="sync",
                     rri_count=None, warmup_rris=0) -> Trace:
        """Build a trace from hand-written records (tests, external tools)."""
        txs = list(txs)
        rs = list(reselections)
        n_sc = cfg.n_sc
        if rri_count is None:
            rri_count = max([t.rri_index for t in txs] + [r.rri_index for r in rs]) + 1
        n_se = cfg.n_se
        return cls(
            cfg=cfg, mode=mode, phases=np.asarray(phases, dtype=np.int64),
            rri_count=rri_count, warmup_rris=warmup_rris, seed=None,
            tx_ue=np.array([t.ue for t in txs], dtype=np.int64),
            tx_rri=np.array([t.rri_index for t in txs], dtype=np.int64),
            tx_dup=np.array([t.dup for t in txs], dtype=np.int64),
            tx_prb=np.array([t.prb.index(n_sc) for t in txs], dtype=np.int64),
            tx_time=np.array([t.time_slot for t in txs], dtype=np.int64),
            rs_ue=np.array([r.ue for r in rs], dtype=np.int64),
            rs_rri=np.array([r.rri_index for r in rs], dtype=np.int64),
            rs_time=np.array([r.time_slot for r in rs], dtype=np.int64),
            rs_kept=np.array([[r.kept] * n_se for r in rs], dtype=bool).reshape(len(rs), n_se),
            rs_n_avail=np.array([r.n_available_unoccupied for r in rs], dtype=np.int64),
            rs_n_cand=np.array([r.n_candidates for r in rs], dtype=np.int64),
            rs_grant=np.array([[p.index(n_sc) for p in r.grant] for r in rs],
                              dtype=np.int64).reshape(len(rs), n_se),
        )


@dataclass(frozen=True)
class CollisionRates:
    p_col: float
    p_col1: float
    p_col2: float
    e1: float
    e2: float
    e3: float
    n_windows: int
    n_collided: int
    n_carryover: int


@dataclass(frozen=True)
class SimReport:
    cfg: SpsConfig
    mode: str
    p_col_hat: float
    p_col1_hat: float
    p_col2_hat: float
    e1_hat: float
    e2_hat: float
    e3_hat: float
    n_a_hat: float
    n_cand_hat: float
    nc_histogram: dict[int, float]
    prr_hat: float
    rri_count: int
    warmup_rris: int
    seed: int
    n_windows: int
    saturated: bool

    def row(self) -> dict:
        c = self.cfg
        return {
            "variant": self.mode,
            "t_rri_ms": c.t_rri_ms, "slot_ms": c.slot_ms, "n_sc": c.n_sc,
            "n_ue": c.n_ue, "p_k": c.p_k, "n_se": c.n_se, "x_min": c.x_min,
            "p_col": self.p_col_hat, "p_col1": self.p_col1_hat, "p_col2": self.p_col2_hat,
            "n_a_bar": self.n_a_hat, "p_hd": c.p_hd, "prr": self.prr_hat,
            "converged": True, "iterations": 0,
            "p_col_hat": self.p_col_hat, "prr_hat": self.prr_hat, "n_a_hat": self.n_a_hat,
            "seed": self.seed, "rri_count": self.rri_count,
        }


REPORT_COLUMNS = ["variant", "t_rri_ms", "slot_ms", "n_sc", "n_ue", "p_k", "n_se",
                  "x_min", "p_col", "p_col1", "p_col2", "n_a_bar", "p_hd", "prr",
                  "converged", "iterations", "p_col_hat", "prr_hat", "n_a_hat",
                  "seed", "rri_count"]


def _min_candidates(cfg: SpsConfig) -> int:
    # round first so 0.2 * 200 does not ceil to 41
    return int(math.ceil(round(cfg.x_min * cfg.n_r, 9)))


def simulate(cfg: SpsConfig, mode: str = "async", rri_count: int = 2000,
             warmup_rris: int = DEFAULT_WARMUP, seed: int = 0,
             per_duplicate_keep: bool = False) -> Trace:
    """Run the protocol and return the raw trace (unannotated)."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if rri_count <= warmup_rris or warmup_rris < 0:
        raise ValueError("need rri_count > warmup_rris >= 0")
    n, nse, L, n_sc = cfg.n_ue, cfg.n_se, cfg.slots_per_rri, cfg.n_sc
    nr = cfg.n_r
    if nse > nr:
        raise ValueError("n_se exceeds pool size")
    if n * nse > nr:
        warnings.warn(f"offered load {n * nse} exceeds pool size {nr}", SaturationWarning,
                      stacklevel=2)
    rng = np.random.default_rng(seed)
    need = _min_candidates(cfg)
    pk = cfg.p_k

    phase = np.zeros(n, dtype=np.int64) if mode == "sync" else rng.integers(0, L, size=n)
    pi = np.asarray(stationary_distribution(cfg.rc_min, cfg.rc_max).probabilities)
    # counter of UE-RRI -1, stationary so warm-up only has to mix grants
    rc = rng.choice(len(pi), size=n, p=pi)
    cur = np.stack([rng.choice(nr, size=nse, replace=False) for _ in range(n)])
    prev = cur.copy()

    tx_chunks, rs_chunks = [], []
    rs_chunks.append((np.arange(n), np.full(n, -1), phase - L, np.zeros((n, nse), bool),
                      np.full(n, nr), np.full(n, nr), cur.copy()))

    slot_cur = cur // n_sc
    ue_idx = np.repeat(np.arange(n), nse)
    dup_idx = np.tile(np.arange(nse), n)
    porder = np.argsort(phase, kind="stable")
    rank = np.empty(n, dtype=np.int64)
    rank[porder] = np.arange(n)
    sorted_phase = phase[porder]
    # one extra RRI so every counted window has its following RRI in the trace
    n_epochs = rri_count + 2
    for e in range(n_epochs):
        draws = draw_rc_init(rng, cfg.rc_min, cfg.rc_max, size=n)
        rc = np.where(rc == 0, draws, rc - 1)
        win = np.flatnonzero(rc == 0)
        new = cur.copy()
        if win.size:
            # phase order lets the sensed occupancy be updated incrementally:
            # UEs whose boundary already passed show their current grant
            win = win[np.argsort(rank[win], kind="stable")]
            if per_duplicate_keep:
                keep = rng.random((win.size, nse)) < pk
            else:
                keep = np.repeat((rng.random(win.size) < pk)[:, None], nse, axis=1)
            n_avail = np.empty(win.size, dtype=np.int64)
            n_cand = np.empty(win.size, dtype=np.int64)
            seen = np.bincount(prev.ravel(), minlength=nr)
            upto = np.searchsorted(sorted_phase, phase[win], side="right")
            done = 0
            for i, u in enumerate(win):
                if upto[i] > done:
                    moved = porder[done:upto[i]]
                    np.add.at(seen, cur[moved].ravel(), 1)
                    np.subtract.at(seen, prev[moved].ravel(), 1)
                    done = upto[i]
                occ = seen > 0
                free = np.flatnonzero(~occ)
                n_avail[i] = free.size
                if free.size < need:
                    extra = rng.choice(np.flatnonzero(occ), need - free.size, replace=False)
                    cands = np.concatenate([free, extra])
                else:
                    cands = free
                n_cand[i] = cands.size
                redo = ~keep[i]
                k = int(redo.sum())
                if k == nse == 1:
                    new[u, 0] = cands[rng.integers(cands.size)]
                elif k:
                    pool = cands[~np.isin(cands, cur[u][~redo])] if k < nse else cands
                    new[u, redo] = rng.choice(pool, size=k, replace=False)
            rs_chunks.append((win, np.full(win.size, e), e * L + phase[win], keep,
                              n_avail, n_cand, new[win].copy()))
        # transmissions in absolute slots [e*L, (e+1)*L)
        slot_new = new // n_sc
        old_mask = (slot_cur < phase[:, None]).ravel()
        new_mask = (slot_new >= phase[:, None]).ravel()
        tx_chunks.append((ue_idx[old_mask], np.full(old_mask.sum(), e - 1),
                          dup_idx[old_mask], cur.ravel()[old_mask]))
        tx_chunks.append((ue_idx[new_mask], np.full(new_mask.sum(), e),
                          dup_idx[new_mask], new.ravel()[new_mask]))
        prev, cur, slot_cur = cur, new, slot_new

    tx_ue = np.concatenate([c[0] for c in tx_chunks])
    tx_rri = np.concatenate([c[1] for c in tx_chunks]).astype(np.int64)
    tx_dup = np.concatenate([c[2] for c in tx_chunks])
    tx_prb = np.concatenate([c[3] for c in tx_chunks])
    # absolute slot: the one congruent to the PRB slot inside UE-RRI k
    slot = tx_prb // n_sc
    start = tx_rri * L + phase[tx_ue]
    tx_time = start + (slot - phase[tx_ue]) % L
    return Trace(
        cfg=cfg, mode=mode, phases=phase, rri_count=rri_count, warmup_rris=warmup_rris,
        seed=seed, tx_ue=tx_ue, tx_rri=tx_rri, tx_dup=tx_dup, tx_prb=tx_prb,
        tx_time=tx_time,
        rs_ue=np.concatenate([c[0] for c in rs_chunks]),
        rs_rri=np.concatenate([c[1] for c in rs_chunks]).astype(np.int64),
        rs_time=np.concatenate([c[2] for c in rs_chunks]).astype(np.int64),
        rs_kept=np.concatenate([c[3] for c in rs_chunks]),
        rs_n_avail=np.concatenate([c[4] for c in rs_chunks]).astype(np.int64),
        rs_n_cand=np.concatenate([c[5] for c in rs_chunks]).astype(np.int64),
        rs_grant=np.concatenate([c[6] for c in rs_chunks]),
    )


# -- trace post-processing -------------------------------------------------

@dataclass
class _Annotation:
    n_c: np.ndarray
    collided: np.ndarray
    tx_class: np.ndarray
    tx_window: np.ndarray  # tx belongs to its UE's selection-window RRI
    win_hit: np.ndarray  # (n_rs, n_se) window outcome per duplicate
    win_class: np.ndarray  # (n_rs, n_se)
    counted: np.ndarray  # (n_rs,) window lies in [warmup, rri_count)


def _lookup(sorted_keys: np.ndarray, order: np.ndarray, keys: np.ndarray) -> np.ndarray:
    """Row indices for ``keys`` (-1 where absent)."""
    if sorted_keys.size == 0:
        return np.full(keys.shape, -1, dtype=np.int64)
    pos = np.searchsorted(sorted_keys, keys)
    pos_c = np.minimum(pos, sorted_keys.size - 1)
    return np.where(sorted_keys[pos_c] == keys, order[pos_c], -1)


def _ranges(starts: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    offsets = np.cumsum(lengths) - lengths
    return np.repeat(starts - offsets, lengths) + np.arange(lengths.sum())


def _annotate(tr: Trace) -> _Annotation:
    cfg = tr.cfg
    n_sc, nse, L = cfg.n_sc, cfg.n_se, cfg.slots_per_rri
    ntx, nrs = tr.tx_ue.size, tr.rs_ue.size
    kmin = int(min(tr.tx_rri.min(initial=0), tr.rs_rri.min(initial=0)))
    kmax = int(max(tr.tx_rri.max(initial=0), tr.rs_rri.max(initial=0)))
    span = kmax - kmin + 2

    rs_key_raw = tr.rs_ue * span + (tr.rs_rri - kmin)
    rs_order = np.argsort(rs_key_raw, kind="stable")
    rs_key = rs_key_raw[rs_order]
    if np.any(np.diff(rs_key) == 0):
        raise TraceError("duplicate reselection record")

    # every tx must use a PRB of the latest grant at or before its RRI
    tx_key = tr.tx_ue * span + (tr.tx_rri - kmin)
    if ntx:
        pos = np.searchsorted(rs_key, tx_key, side="right") - 1
        bad = pos < 0
        src = rs_order[np.where(bad, 0, pos)] if nrs else np.zeros(ntx, dtype=np.int64)
        if nrs:
            bad |= tr.rs_ue[src] != tr.tx_ue
            bad |= tr.rs_grant[src, tr.tx_dup] != tr.tx_prb
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise TraceError(f"tx of UE {tr.tx_ue[i]} in RRI {tr.tx_rri[i]} "
                             f"on PRB {tr.tx_prb[i]} has no grant")

    # PRB-instants
    inst = tr.tx_time * n_sc + tr.tx_prb % n_sc
    _, inv, counts = np.unique(inst, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    n_c = counts[inv]
    collided = n_c >= 2

    tx_window = _lookup(rs_key, rs_order, tx_key) >= 0
    win_at_inst = np.bincount(inv, weights=tx_window, minlength=counts.size)

    dkey = tx_key * nse + tr.tx_dup
    d_order = np.argsort(dkey, kind="stable")
    d_sorted = dkey[d_order]
    wkey = (rs_key_raw * nse)[:, None] + np.arange(nse)[None, :]
    row_w = _lookup(d_sorted, d_order, wkey)
    row_n = _lookup(d_sorted, d_order, wkey + nse)

    hit_w = (row_w >= 0) & collided[np.maximum(row_w, 0)]
    # a UE whose window overlaps ours and who picked our PRB after our window
    # slot collides with our next transmission, inside its own window
    rn = np.maximum(row_n, 0)
    others_in_window = win_at_inst[inv[rn]] - tx_window[rn] > 0
    hit_n = (row_n >= 0) & collided[rn] & others_in_window & ~hit_w
    win_hit = hit_w | hit_n
    hit_row = np.where(hit_w, row_w, np.where(hit_n, row_n, -1))

    win_class = np.where(win_hit, EVENT1, NONE).astype(np.int8)
    kept_hits = np.argwhere(win_hit & tr.rs_kept)
    if kept_hits.size:
        by_ue = {int(u): np.sort(tr.rs_time[tr.rs_ue == u]) for u in np.unique(tr.rs_ue)}
        order = np.argsort(inv, kind="stable")
        bounds = np.searchsorted(inv[order], np.arange(counts.size + 1))
        empty = np.empty(0, dtype=np.int64)
        for r, j in kept_hits:
            u, t0 = int(tr.rs_ue[r]), int(tr.rs_time[r])
            own = by_ue[u]
            earlier = own[own < t0]
            t_prev = earlier[-1] if earlier.size else -np.inf
            g = inv[hit_row[r, j]]
            cls = E2_E2
            for v in tr.tx_ue[order[bounds[g]:bounds[g + 1]]].tolist():
                if v == u:
                    continue
                wt = by_ue.get(v, empty)
                # partner's window overlaps ours: both counters hit 0 together
                if np.any(np.abs(wt - t0) < L):
                    cls = E2_E1
                    break
                # partner renewed (and kept) after our previous window
                if np.any((wt >= t_prev + L) & (wt <= t0 - L)):
                    cls = E2_E3
            win_class[r, j] = cls

    tx_class = np.where(collided, CARRYOVER, NONE).astype(np.int8)
    rr, jj = np.nonzero(win_hit)
    tx_class[hit_row[rr, jj]] = win_class[rr, jj]
    counted = (tr.rs_rri >= tr.warmup_rris) & (tr.rs_rri < tr.rri_count)
    return _Annotation(n_c=n_c, collided=collided, tx_class=tx_class, tx_window=tx_window,
                       win_hit=win_hit, win_class=win_class, counted=counted)


def classify_collisions(trace: Trace) -> CollisionRates:
    """Per-window collision rates by event type.

    Denominator: counted selection windows times ``n_se`` (one trial per
    duplicate). Collisions outside selection windows are carryover and only
    affect PRR.
    """
    ann = trace.annotation()
    hits = ann.win_hit[ann.counted]
    cls = ann.win_class[ann.counted]
    denom = hits.size
    if denom == 0:
        nan = float("nan")
        return CollisionRates(nan, nan, nan, nan, nan, nan, 0, 0, 0)
    rate = lambda c: float(np.count_nonzero(cls == c)) / denom
    e1, e2, e3 = rate(E2_E1), rate(E2_E2), rate(E2_E3)
    tmin = trace.warmup_rris * trace.slots_per_rri
    tmax = trace.rri_count * trace.slots_per_rri
    in_range = (trace.tx_time >= tmin) & (trace.tx_time < tmax)
    return CollisionRates(
        p_col=float(hits.sum()) / denom, p_col1=rate(EVENT1), p_col2=e1 + e2 + e3,
        e1=e1, e2=e2, e3=e3, n_windows=int(ann.counted.sum()),
        n_collided=int(hits.sum()),
        n_carryover=int(np.count_nonzero(ann.tx_class[in_range] == CARRYOVER)),
    )


def nc_histogram(trace: Trace) -> dict[int, float]:
    """Distribution of transmitter counts over collided PRB-instants."""
    ann = trace.annotation()
    L, n_sc = trace.slots_per_rri, trace.cfg.n_sc
    sel = ann.collided & (trace.tx_time >= trace.warmup_rris * L) & \
        (trace.tx_time < trace.rri_count * L)
    if not sel.any():
        return {}
    inst = trace.tx_time[sel] * n_sc + trace.tx_prb[sel] % n_sc
    _, first = np.unique(inst, return_index=True)
    vals, cnt = np.unique(ann.n_c[sel][first], return_counts=True)
    total = cnt.sum()
    return {int(v): float(c) / total for v, c in zip(vals, cnt)}


def compute_prr(trace: Trace, cfg: SpsConfig | None = None) -> float:
    """Packet reception ratio over (source, RRI, receiver) triples.

    A packet reaches a receiver if at least one duplicate sits on a
    collision-free PRB in a slot where that receiver is not transmitting.
    With a single UE there is no real receiver; a probe receiver that
    transmits in one uniformly random slot per RRI is used instead, which
    makes the result the expected half-duplex-only loss.
    """
    cfg = cfg or trace.cfg
    n, nse = trace.n_ue, cfg.n_se
    ann = trace.annotation()
    sel = np.flatnonzero((trace.tx_rri >= trace.warmup_rris) & (trace.tx_rri < trace.rri_count))
    n_src = n * (trace.rri_count - trace.warmup_rris)
    if n_src == 0:
        return float("nan")
    if n < 2:
        return _probe_prr(trace, sel, ann.collided, n_src)
    # (slot, ue) pairs of every transmitter, sorted
    busy = np.unique(trace.tx_time * n + trace.tx_ue)

    ue, t = trace.tx_ue[sel], trace.tx_time[sel]
    src = ue.astype(np.int64) * (trace.rri_count + 1) + trace.tx_rri[sel]
    clean = ~ann.collided[sel]
    # first clean duplicate of every source packet anchors the deaf-receiver set
    key = np.where(clean, src * nse + trace.tx_dup[sel], -1)
    anchors = np.flatnonzero(clean)
    anchors = anchors[np.unique(src[anchors], return_index=True)[1]]
    lo = np.searchsorted(busy, t[anchors] * n)
    hi = np.searchsorted(busy, (t[anchors] + 1) * n)
    members = _ranges(lo, hi - lo)
    owner = np.repeat(np.arange(anchors.size), hi - lo)
    rx = busy[members] % n
    deaf = rx != ue[anchors][owner]
    if nse > 1:
        # a receiver stays deaf only if busy at every clean duplicate's slot
        d_order = np.argsort(key, kind="stable")
        d_sorted = key[d_order]
        for j in range(nse):
            rows = _lookup(d_sorted, d_order, src[anchors] * nse + j)
            r = rows[owner]
            has = r >= 0
            probe = t[np.maximum(r, 0)] * n + rx
            pos = np.minimum(np.searchsorted(busy, probe), busy.size - 1)
            deaf &= ~has | (busy[pos] == probe)
    n_deaf = np.bincount(owner[deaf], minlength=anchors.size)
    total = anchors.size * (n - 1) - int(n_deaf.sum())
    return float(total) / (n_src * (n - 1))


def _probe_prr(trace: Trace, sel: np.ndarray, collided: np.ndarray, n_src: int) -> float:
    clean = sel[~collided[sel]]
    if clean.size == 0:
        return 0.0
    src = trace.tx_ue[clean] * (trace.rri_count + 1) + trace.tx_rri[clean]
    _, inv = np.unique(src, return_inverse=True)
    inv = inv.ravel()
    t = trace.tx_time[clean]
    lo = np.full(inv.max() + 1, np.iinfo(np.int64).max)
    hi = np.full(inv.max() + 1, np.iinfo(np.int64).min)
    np.minimum.at(lo, inv, t)
    np.maximum.at(hi, inv, t)
    # the probe misses a packet only when all its clean copies share one slot
    p_miss = np.where(lo == hi, 1.0 / trace.slots_per_rri, 0.0)
    return float((1.0 - p_miss).sum()) / n_src


def measure_na(trace: Trace) -> float:
    """Mean unoccupied-PRB count seen at counted selection windows."""
    counted = (trace.rs_rri >= trace.warmup_rris) & (trace.rs_rri < trace.rri_count)
    if not counted.any():
        return float("nan")
    return float(trace.rs_n_avail[counted].mean())


def measure_candidates(trace: Trace) -> float:
    counted = (trace.rs_rri >= trace.warmup_rris) & (trace.rs_rri < trace.rri_count)
    if not counted.any():
        return float("nan")
    return float(trace.rs_n_cand[counted].mean())


def report(trace: Trace) -> SimReport:
    rates = classify_collisions(trace)
    cfg = trace.cfg
    return SimReport(
        cfg=cfg, mode=trace.mode, p_col_hat=rates.p_col, p_col1_hat=rates.p_col1,
        p_col2_hat=rates.p_col2, e1_hat=rates.e1, e2_hat=rates.e2, e3_hat=rates.e3,
        n_a_hat=measure_na(trace), n_cand_hat=measure_candidates(trace),
        nc_histogram=nc_histogram(trace), prr_hat=compute_prr(trace, cfg),
        rri_count=trace.rri_count, warmup_rris=trace.warmup_rris,
        seed=-1 if trace.seed is None else int(trace.seed), n_windows=rates.n_windows,
        saturated=cfg.n_ue * cfg.n_se > cfg.n_r,
    )


def run(cfg: SpsConfig, mode: str = "async", rri_count: int = 2000,
        warmup_rris: int = DEFAULT_WARMUP, seed: int = 0,
        per_duplicate_keep: bool = False) -> tuple[Trace, SimReport]:
    """Simulate and aggregate. Deterministic in all arguments."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SaturationWarning)
        trace = simulate(cfg, mode, rri_count, warmup_rris, seed, per_duplicate_keep)
    return trace, report(trace)
