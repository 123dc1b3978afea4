"""Beacons, neighbor estimation and the longitudinal/lateral controllers."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

from .mobility import (ROAD_MAIN, ROAD_MERGE, ROAD_MERGING, RoadGeometry,
                       VehicleState, project_1d)

_ROAD_CODE = {ROAD_MAIN: 0, ROAD_MERGE: 1, ROAD_MERGING: 2}
_ROAD_NAME = {v: k for k, v in _ROAD_CODE.items()}

# little-endian: id u32, x/y/v/theta f64, road u8, timestamp_ms i64
_BEACON_STRUCT = struct.Struct("<IddddBq")
BEACON_SIZE_BYTES = _BEACON_STRUCT.size


@dataclass(frozen=True)
class BeaconPacket:
    """Application payload broadcast every reservation period."""

    vid: int
    x: float
    y: float
    v: float
    theta: float
    road: str
    ts: int  # generation instant, ms


def pack_beacon(p: BeaconPacket) -> bytes:
    return _BEACON_STRUCT.pack(p.vid, p.x, p.y, p.v, p.theta, _ROAD_CODE[p.road], p.ts)


def unpack_beacon(raw: bytes) -> BeaconPacket:
    vid, x, y, v, theta, road, ts = _BEACON_STRUCT.unpack(raw)
    return BeaconPacket(vid, x, y, v, theta, _ROAD_NAME[road], ts)


class NeighborBuffer:
    """Latest beacon per sender, as visible to the application."""

    def __init__(self) -> None:
        self._latest: dict[int, BeaconPacket] = {}

    def insert(self, p: BeaconPacket) -> None:
        cur = self._latest.get(p.vid)
        if cur is None or p.ts >= cur.ts:
            self._latest[p.vid] = p

    def get(self, vid: int) -> BeaconPacket | None:
        return self._latest.get(vid)

    def packets(self) -> list[BeaconPacket]:
        return [self._latest[k] for k in sorted(self._latest)]

    def __len__(self) -> int:
        return len(self._latest)


@dataclass(frozen=True)
class NeighborEstimate:
    """A neighbor's state projected to 'now' from its last beacon."""

    vid: int
    s: float        # corrected 1-D position along the road network
    v: float
    y: float
    theta: float
    road: str
    aoi_ms: int


def estimate_neighbor(p: BeaconPacket, now: int, geo: RoadGeometry) -> NeighborEstimate:
    """Advance the beaconed position along the 1-D projection by speed x AoI.

    Velocity and heading are used as reported; only the longitudinal position
    is extrapolated, assuming constant speed since the packet left the sender.
    """
    aoi = now - p.ts
    if aoi < 0:
        raise ValueError("beacon from the future")
    s = project_1d(p.x, p.y, p.road, geo) + p.v * (aoi / 1000.0)
    return NeighborEstimate(p.vid, s, p.v, p.y, p.theta, p.road, aoi)


def select_leader(ego_s: float, neighbors: list[NeighborEstimate]) -> NeighborEstimate | None:
    """Nearest neighbor strictly ahead on the 1-D projection; ties to lower id."""
    best = None
    for n in neighbors:
        if n.s <= ego_s:
            continue
        if best is None or n.s < best.s or (n.s == best.s and n.vid < best.vid):
            best = n
    return best


def select_follower(ego_s: float, neighbors: list[NeighborEstimate]) -> NeighborEstimate | None:
    """Nearest neighbor strictly behind on the 1-D projection; ties to lower id."""
    best = None
    for n in neighbors:
        if n.s >= ego_s:
            continue
        if best is None or n.s > best.s or (n.s == best.s and n.vid < best.vid):
            best = n
    return best


# ---------------------------------------------------------------------------
# CACC

MODE_SPEED = "speed"
MODE_GAP_CLOSING = "gap_closing"
MODE_GAP = "gap"
MODE_COLLISION_AVOIDANCE = "collision_avoidance"


@dataclass(frozen=True)
class CaccConfig:
    """Gains and thresholds of the four-mode platooning controller."""

    k1: float = 1.0                     # speed mode proportional gain
    k2_gap_closing: float = 0.45
    k3_gap_closing: float = 0.125
    k2_gap: float = 0.45
    k3_gap: float = 0.05
    k2_collision_avoidance: float = 0.005
    k3_collision_avoidance: float = 0.05
    headway_s: float = 1.0
    desired_speed: float = 20.0
    dt: float = 0.1                     # control period
    gap_boundary_m: float = 2.0         # spacing-error band separating the modes
    leader_range_m: float = 100.0       # beyond this the leader is ignored
    a_min: float = -3.0
    a_max: float = 3.0


def cacc_mode(ego_s: float, ego_v: float, leader: NeighborEstimate | None,
              cfg: CaccConfig) -> str:
    if leader is None or leader.s - ego_s > cfg.leader_range_m:
        return MODE_SPEED
    e = (leader.s - ego_s) - cfg.headway_s * ego_v
    if e < -cfg.gap_boundary_m:
        return MODE_COLLISION_AVOIDANCE
    if e > cfg.gap_boundary_m:
        return MODE_GAP_CLOSING
    return MODE_GAP


def cacc_accel(ego_s: float, ego_v: float, a_prev: float,
               leader: NeighborEstimate | None, cfg: CaccConfig) -> tuple[float, str]:
    """Acceleration command and the mode that produced it.

    Speed mode tracks the desired speed directly; the following modes step the
    desired speed by gains on the spacing error (gap minus headway) and the
    speed error (relative speed minus headway times the previous acceleration),
    then convert to acceleration over one control period.
    """
    mode = cacc_mode(ego_s, ego_v, leader, cfg)
    if mode == MODE_SPEED:
        a = cfg.k1 * (cfg.desired_speed - ego_v)
    else:
        k2, k3 = {
            MODE_GAP_CLOSING: (cfg.k2_gap_closing, cfg.k3_gap_closing),
            MODE_GAP: (cfg.k2_gap, cfg.k3_gap),
            MODE_COLLISION_AVOIDANCE: (cfg.k2_collision_avoidance, cfg.k3_collision_avoidance),
        }[mode]
        p_err = (leader.s - ego_s) - cfg.headway_s * ego_v
        v_err = (leader.v - ego_v) - cfg.headway_s * a_prev
        v_next = ego_v + k2 * p_err + k3 * v_err
        a = (v_next - ego_v) / cfg.dt
    return min(max(a, cfg.a_min), cfg.a_max), mode


# ---------------------------------------------------------------------------
# Lateral control and mode transitions


@dataclass(frozen=True)
class TwoPointConfig:
    """Two-point visual steering toward the main-lane centerline."""

    k_near: float = 0.2
    k_far: float = 0.6
    d_near_m: float = 5.0
    d_far_m: float = 30.0
    delta_max: float = math.radians(15.0)


def two_point_steering(s: VehicleState, cfg: TwoPointConfig = TwoPointConfig(),
                       target_y: float = 0.0) -> float:
    """Steering from the bearings to a near and a far centerline point.

    On the target centerline with zero heading both bearings vanish and the
    command is exactly zero, so straight-road traffic is unaffected.
    """
    near = math.atan2(target_y - s.y, cfg.d_near_m) - s.phi
    far = math.atan2(target_y - s.y, cfg.d_far_m) - s.phi
    delta = cfg.k_near * near + cfg.k_far * far
    return min(max(delta, -cfg.delta_max), cfg.delta_max)


CTRL_CACC = "CACC"
CTRL_RL = "RL"


def mode_transition(road: str, x: float, geo: RoadGeometry) -> str:
    """Controller selection: the learned policy owns the acceleration lane."""
    if road == ROAD_MERGE and geo.ramp_entry_x <= x < geo.merge_point_x:
        return CTRL_RL
    return CTRL_CACC
