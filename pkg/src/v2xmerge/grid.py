"""Sidelink resource grid: SSR addressing, reservation mapping, selection windows."""

from __future__ import annotations

import math
from dataclasses import dataclass

SUBFRAMES_PER_FRAME = 10
SFN_CYCLE_FRAMES = 1024
CYCLE_SUBFRAMES = SFN_CYCLE_FRAMES * SUBFRAMES_PER_FRAME  # one subframe == 1 ms


@dataclass(frozen=True)
class GridConfig:
    """Static layout of the sidelink resource pool and the selection procedure."""

    sc: int = 3                # subchannels per subframe
    rsvp_ms: int = 20          # reservation interval; 1 subframe == 1 ms
    t1: int = 4                # selection window lower edge, subframes after "now"
    t2: int = 20               # selection window upper edge, inclusive
    sensing_ms: int = 1000     # sensing window length

    def __post_init__(self) -> None:
        if self.sc < 1:
            raise ValueError("sc must be >= 1")
        if self.rsvp_ms < 1 or CYCLE_SUBFRAMES % self.rsvp_ms != 0:
            raise ValueError("rsvp_ms must divide the 10240-subframe cycle")
        if not 0 < self.t1 <= self.t2:
            raise ValueError("need 0 < t1 <= t2")
        if self.sensing_ms % self.rsvp_ms != 0:
            raise ValueError("sensing_ms must be a multiple of rsvp_ms")

    @property
    def window_subframes(self) -> int:
        return self.t2 - self.t1 + 1

    @property
    def m_total(self) -> int:
        """Number of candidate SSRs in one selection window."""
        return self.window_subframes * self.sc


@dataclass(frozen=True, order=True)
class SsrAddress:
    """A single-subframe resource: (system frame, subframe, subchannel)."""

    frame: int
    subframe: int
    subchannel: int

    def __post_init__(self) -> None:
        if not 0 <= self.frame < SFN_CYCLE_FRAMES:
            raise ValueError("frame out of range")
        if not 0 <= self.subframe < SUBFRAMES_PER_FRAME:
            raise ValueError("subframe out of range")
        if self.subchannel < 0:
            raise ValueError("subchannel out of range")


def absolute_subframe(addr: SsrAddress) -> int:
    """Position of the SSR inside the 10240-subframe cycle."""
    return addr.frame * SUBFRAMES_PER_FRAME + addr.subframe


def from_absolute(subframe: int, subchannel: int) -> SsrAddress:
    """Inverse of absolute_subframe; wraps modulo the cycle."""
    t = subframe % CYCLE_SUBFRAMES
    return SsrAddress(t // SUBFRAMES_PER_FRAME, t % SUBFRAMES_PER_FRAME, subchannel)


def co_map(addr: SsrAddress, i: int, rsvp_ms: int) -> SsrAddress:
    """i-th future use of a periodic reservation.

    The reservation advances by i*rsvp_ms subframes with SFN wrap-around; the
    subchannel never changes.
    """
    if i < 0:
        raise ValueError("reservation index must be >= 0")
    return from_absolute(absolute_subframe(addr) + i * rsvp_ms, addr.subchannel)


def selection_window(now: int, cfg: GridConfig) -> list[SsrAddress]:
    """Candidate SSRs in [now+t1, now+t2] x all subchannels.

    `now` is a monotone subframe counter; addresses wrap modulo the cycle.
    Order is deterministic: subframe-major, subchannel-minor ascending.
    """
    out = []
    for t in range(now + cfg.t1, now + cfg.t2 + 1):
        for z in range(cfg.sc):
            out.append(from_absolute(t, z))
    return out


def a_rssi(addr: SsrAddress, samples, cfg: GridConfig) -> float | None:
    """Average RSSI over sensed SSRs that map onto `addr` under the reservation mapping.

    `samples` maps (absolute subframe, subchannel) -> RSSI in dBm for every SSR
    the vehicle monitored inside its sensing window.  Averaging is done in
    linear power (mW) and converted back to dBm.  Returns None when no
    congruent sample exists; schedulers rank that as -inf dBm, i.e. most
    preferred, since there is no evidence of occupancy.
    """
    target = absolute_subframe(addr)
    acc = 0.0
    n = 0
    for (s, z), dbm in samples.items():
        if z == addr.subchannel and (target - s) % cfg.rsvp_ms == 0:
            acc += 10.0 ** (dbm / 10.0)
            n += 1
    if n == 0:
        return None
    return 10.0 * math.log10(acc / n)
