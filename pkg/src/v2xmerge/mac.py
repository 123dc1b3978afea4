"""Sidelink MAC: SCI codec, sensing history, SB-SPS and ESB-SPS schedulers.

Semi-persistent scheduling keeps a selected SSR for a reselection-counter (RC)
worth of periods.  The standard scheduler (SB-SPS) excludes candidates whose
exact SSR is projected busy from decoded control messages, estimating the
remaining reservation as ceil(100 / Rsvp) periods.  The enhanced scheduler
(ESB-SPS) reads the true RC carried in the proposed SCI format and drops every
candidate whose own reservation would share a subframe with a live sensed
reservation: two vehicles transmitting in the same subframe can never hear
each other (half-duplex), whatever the subchannel.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .grid import (CYCLE_SUBFRAMES, GridConfig, SsrAddress, absolute_subframe,
                   from_absolute)

# ---------------------------------------------------------------------------
# SCI codec


@dataclass(frozen=True)
class SciMessage:
    """Sidelink control information, bit-packed in field order.

    The last byte carries the reselection counter in the proposed format and
    the priority/retransmission bits in the standard format; rc=None marks a
    standard-format message.
    """

    resource_reservation: int      # reservation interval code, rsvp_ms / 20
    frequency_location: int        # index of the occupied subchannel
    mcs: int = 0
    transmission_format: int = 0
    rc: int | None = None
    priority_retx: int = 0

    @property
    def format(self) -> str:
        return "standard" if self.rc is None else "proposed"


def frl_bits(sc: int) -> int:
    """Bits of the frequency resource location field: ceil(log2(sc*(sc+1)/2))."""
    if sc < 1:
        raise ValueError("sc must be >= 1")
    n = sc * (sc + 1) // 2
    return max(1, math.ceil(math.log2(n))) if n > 1 else 0


def sci_width_bits(sc: int) -> int:
    """Total SCI width; the reserved field pads the variable part to 14 bits."""
    if frl_bits(sc) > 14:
        raise ValueError("sc too large for the 14-bit variable field")
    return 4 + 5 + 1 + 14 + 8


def rr_code_for(rsvp_ms: int) -> int:
    if rsvp_ms % 20 != 0 or not 1 <= rsvp_ms // 20 <= 15:
        raise ValueError("reservation interval must be a multiple of 20 ms up to 300 ms")
    return rsvp_ms // 20


def encode_sci(msg: SciMessage, sc: int) -> int:
    """Pack the message MSB-first in table order; returns the code word."""
    nf = frl_bits(sc)
    reserved = 14 - nf
    last8 = msg.priority_retx if msg.rc is None else msg.rc
    fields = [
        (msg.resource_reservation, 4),
        (msg.frequency_location, nf),
        (msg.mcs, 5),
        (msg.transmission_format, 1),
        (0, reserved),
        (last8, 8),
    ]
    word = 0
    for value, width in fields:
        if not 0 <= value < (1 << width):
            raise ValueError(f"field value {value} does not fit in {width} bits")
        word = (word << width) | value
    return word


def decode_sci(word: int, sc: int, fmt: str) -> SciMessage:
    """Unpack a code word; `fmt` selects how the trailing byte is read."""
    if fmt not in ("standard", "proposed"):
        raise ValueError("fmt must be 'standard' or 'proposed'")
    nf = frl_bits(sc)
    if not 0 <= word < (1 << sci_width_bits(sc)):
        raise ValueError("code word out of range")
    last8 = word & 0xFF
    word >>= 8
    reserved = word & ((1 << (14 - nf)) - 1)
    if reserved:
        raise ValueError("reserved bits must be zero")
    word >>= 14 - nf
    tf = word & 0x1
    word >>= 1
    mcs = word & 0x1F
    word >>= 5
    frl = word & ((1 << nf) - 1) if nf else 0
    word >>= nf
    rr = word & 0xF
    if fmt == "proposed":
        return SciMessage(rr, frl, mcs, tf, rc=last8)
    return SciMessage(rr, frl, mcs, tf, rc=None, priority_retx=last8)


# ---------------------------------------------------------------------------
# Reselection counter


def draw_rc(rng: np.random.Generator, rsvp_ms: int) -> int:
    """Fresh reselection counter, uniform over the interval scaled by the period."""
    scale = 100 // max(20, rsvp_ms)
    return int(rng.integers(5 * scale, 15 * scale + 1))


def rc_estimate(rsvp_ms: int) -> int:
    """Remaining-use guess a standard receiver makes for a sensed reservation."""
    return math.ceil(100 / rsvp_ms)


# ---------------------------------------------------------------------------
# Sensing history


class SensedSci(NamedTuple):
    subframe: int          # monotone subframe where the SCI was decoded
    subchannel: int
    rsrp_dbm: float
    rc: int | None         # None when the standard format carries no counter


class SensingHistory:
    """Sliding sensing window: per-SSR RSSI, decoded SCIs, own transmissions.

    RSSI rows live in a ring buffer indexed by subframe modulo the window
    length; a NaN row marks a subframe the vehicle did not monitor (its own
    transmissions, or time before the vehicle existed).  Decoded SCIs are kept
    one per (subframe phase, subchannel): consecutive messages of one periodic
    reservation overwrite each other, which preserves the projected future of
    the reservation while bounding memory.
    """

    def __init__(self, cfg: GridConfig, rssi_ring: np.ndarray | None = None,
                 stamp: np.ndarray | None = None):
        self.cfg = cfg
        n = cfg.sensing_ms
        self.rssi_mw = rssi_ring if rssi_ring is not None else np.full((n, cfg.sc), np.nan)
        self.stamp = stamp if stamp is not None else np.full(n, -(10 ** 9), dtype=np.int64)
        self.scis: dict[tuple[int, int], SensedSci] = {}
        self.own_tx: deque[int] = deque()

    def record_rssi(self, t: int, row_mw) -> None:
        idx = t % self.cfg.sensing_ms
        self.rssi_mw[idx] = row_mw
        self.stamp[idx] = t

    def record_tx(self, t: int) -> None:
        """Mark an own transmission: the subframe is unmonitored (half-duplex)."""
        self.own_tx.append(t)
        idx = t % self.cfg.sensing_ms
        self.rssi_mw[idx] = np.nan
        self.stamp[idx] = t

    def record_sci(self, t: int, subchannel: int, rsrp_dbm: float, rc: int | None) -> None:
        key = (t % self.cfg.rsvp_ms, subchannel)
        self.scis[key] = SensedSci(t, subchannel, rsrp_dbm, rc)

    def blinded_phases(self, now: int) -> set[int]:
        """Subframe phases the vehicle could not monitor due to own transmissions."""
        lo = now - self.cfg.sensing_ms
        while self.own_tx and self.own_tx[0] < lo:
            self.own_tx.popleft()
        return {t % self.cfg.rsvp_ms for t in self.own_tx}

    def sensed_scis(self, now: int) -> list[SensedSci]:
        lo = now - self.cfg.sensing_ms
        stale = [k for k, s in self.scis.items() if s.subframe < lo]
        for k in stale:
            del self.scis[k]
        return sorted(self.scis.values())

    def class_mean_mw(self, now: int) -> np.ndarray:
        """Mean linear RSSI per (subframe phase, subchannel); NaN where unsampled."""
        cfg = self.cfg
        valid = (self.stamp >= now - cfg.sensing_ms) & (self.stamp < now)
        total = np.zeros((cfg.rsvp_ms, cfg.sc))
        count = np.zeros((cfg.rsvp_ms, cfg.sc))
        rows = np.nonzero(valid)[0]
        if rows.size:
            phases = (self.stamp[rows] % cfg.rsvp_ms).astype(int)
            vals = self.rssi_mw[rows]
            good = ~np.isnan(vals)
            np.add.at(total, phases, np.where(good, vals, 0.0))
            np.add.at(count, phases, good.astype(float))
        with np.errstate(invalid="ignore"):
            mean = total / count
        mean[count == 0] = np.nan
        return mean


# ---------------------------------------------------------------------------
# Schedulers


def _monotone_in_window(addr: SsrAddress, now: int, cfg: GridConfig) -> int:
    """Monotone subframe of a window address (the window is far shorter than a cycle)."""
    target = absolute_subframe(addr)
    for t in range(now + cfg.t1, now + cfg.t2 + 1):
        if t % CYCLE_SUBFRAMES == target:
            return t
    raise ValueError("address not inside the selection window")


def _ranked_pick(cands: list[tuple[int, int]], history: SensingHistory, now: int,
                 cfg: GridConfig, rng: np.random.Generator) -> SsrAddress:
    # rank ascending by average sensed power; unsampled classes rank first
    mean = history.class_mean_mw(now)
    keyed = []
    for s, z in cands:
        m = mean[s % cfg.rsvp_ms, z]
        keyed.append((-math.inf if np.isnan(m) else float(m), s, z))
    keyed.sort()
    sb_size = min(int(0.2 * cfg.m_total) + 1, len(keyed))
    pick = keyed[int(rng.integers(sb_size))]
    return from_absolute(pick[1], pick[2])


def _survivors(cands, scis, p_th_dbm, own_rc, cfg, enhanced):
    rsvp = cfg.rsvp_ms
    est = rc_estimate(rsvp)
    out = []
    for s, z in cands:
        hit = False
        for sci in scis:
            if sci.rsrp_dbm <= p_th_dbm:
                continue
            dt = s - sci.subframe
            if dt % rsvp:
                continue
            k = dt // rsvp
            if enhanced:
                rc = sci.rc if sci.rc is not None else est
                # overlap of the candidate's reservation with the sensed one;
                # any subchannel counts, same subframe means mutual deafness
                if 0 <= k < rc and own_rc > 0:
                    hit = True
                    break
            else:
                if z == sci.subchannel and 0 <= k < est:
                    hit = True
                    break
        if not hit:
            out.append((s, z))
    return out


def _select(now: int, history: SensingHistory, cfg: GridConfig,
            rng: np.random.Generator, own_rc: int, p_th_dbm: float,
            enhanced: bool) -> SsrAddress:
    cands = [(s, z) for s in range(now + cfg.t1, now + cfg.t2 + 1)
             for z in range(cfg.sc)]
    blinded = history.blinded_phases(now)
    open_cands = [c for c in cands if c[0] % cfg.rsvp_ms not in blinded]
    scis = history.sensed_scis(now)
    floor = 0.2 * cfg.m_total
    p_th = p_th_dbm
    while True:
        surv = _survivors(open_cands, scis, p_th, own_rc, cfg, enhanced)
        if len(surv) >= floor or not any(s.rsrp_dbm > p_th for s in scis):
            break
        p_th += 3.0  # too few candidates left: relax the power exclusion
    if len(surv) < int(floor) + 1:
        # degenerate pools only: re-admit excluded candidates, window order, to
        # keep the scheduler total
        seen = set(surv)
        surv = surv + [c for c in cands if c not in seen][:int(floor) + 1 - len(surv)]
    return _ranked_pick(surv, history, now, cfg, rng)


def sbsps_select(now: int, history: SensingHistory, cfg: GridConfig,
                 rng: np.random.Generator, own_rc: int, p_th_dbm: float) -> SsrAddress:
    """Standard sensing-based selection.

    Excludes half-duplex-blinded candidates and candidates whose exact SSR is
    projected busy by a decoded SCI stronger than the power threshold, using
    the fixed remaining-use estimate.  The threshold escalates by 3 dB while
    fewer than 20% of the window survives.  Picks uniformly from the best 20%
    by ascending average sensed power.
    """
    return _select(now, history, cfg, rng, own_rc, p_th_dbm, enhanced=False)


def esbsps_select(now: int, history: SensingHistory, cfg: GridConfig,
                  rng: np.random.Generator, own_rc: int, p_th_dbm: float) -> SsrAddress:
    """Enhanced selection using the true reselection counters from proposed SCIs.

    A candidate is dropped when the reservation it would start (own_rc periods)
    shares any subframe with a live sensed reservation whose RSRP exceeds the
    threshold.  Escalation and ranking follow the standard procedure.
    """
    return _select(now, history, cfg, rng, own_rc, p_th_dbm, enhanced=True)


# ---------------------------------------------------------------------------
# Per-vehicle scheduler state machine


class VehicleMac:
    """Owns one vehicle's reservation: counter, SSR, transmit schedule."""

    def __init__(self, vid: int, cfg: GridConfig, scheme: str,
                 rng: np.random.Generator, p_th_dbm: float = -110.0,
                 keep_prob: float = 0.0, history: SensingHistory | None = None):
        if scheme not in ("standard", "enhanced"):
            raise ValueError("scheme must be 'standard' or 'enhanced'")
        self.vid = vid
        self.cfg = cfg
        self.scheme = scheme
        self.rng = rng
        self.p_th_dbm = p_th_dbm
        self.keep_prob = keep_prob
        self.history = history if history is not None else SensingHistory(cfg)
        self.rc = 0
        self.subchannel = 0
        self.next_tx = -1          # monotone subframe of the next transmission
        self.reselections = 0

    def _reselect(self, now: int) -> None:
        fn = esbsps_select if self.scheme == "enhanced" else sbsps_select
        addr = fn(now, self.history, self.cfg, self.rng, self.rc, self.p_th_dbm)
        self.subchannel = addr.subchannel
        self.next_tx = _monotone_in_window(addr, now, self.cfg)
        self.reselections += 1

    def start(self, now: int) -> None:
        """First selection at power-on; transmissions begin inside the window."""
        self.rc = draw_rc(self.rng, self.cfg.rsvp_ms)
        self._reselect(now)

    def on_transmit_opportunity(self, now: int) -> SciMessage:
        """Emit the SCI for the scheduled transmission and advance the schedule.

        The proposed format carries the counter as valid for this transmission
        (before the decrement).  When the counter expires the vehicle draws a
        fresh one, keeps the SSR with probability keep_prob, and otherwise
        reselects immediately so the next transmission still lands within one
        selection window of this one.
        """
        if now != self.next_tx:
            raise RuntimeError("transmit opportunity outside the schedule")
        sci = SciMessage(
            resource_reservation=rr_code_for(self.cfg.rsvp_ms),
            frequency_location=self.subchannel,
            transmission_format=1 if self.scheme == "enhanced" else 0,
            rc=self.rc if self.scheme == "enhanced" else None,
        )
        self.history.record_tx(now)
        self.rc -= 1
        if self.rc == 0:
            self.rc = draw_rc(self.rng, self.cfg.rsvp_ms)
            if self.rng.uniform() < self.keep_prob:
                self.next_tx = now + self.cfg.rsvp_ms
            else:
                self._reselect(now)
        else:
            self.next_tx = now + self.cfg.rsvp_ms
        return sci
