"""Road geometry, kinematic bicycle model and collision geometry."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

ROAD_MAIN = "MAIN"        # driving on the main road
ROAD_MERGE = "MERGE"      # on the ramp / acceleration lane, merge point not yet passed
ROAD_MERGING = "MERGING"  # entered the main road past the merge point


@dataclass(frozen=True)
class RoadGeometry:
    """Straight main road plus a parallel ramp ending at the merge point x=0.

    The main-lane centerline is y=0; the ramp / acceleration-lane centerline is
    y=-lane_width.  The acceleration lane spans x in [-l_merge, 0); the
    adjusting area spans the l_adjust metres before that.
    """

    l_adjust: float = 200.0
    l_merge: float = 175.0
    lane_width: float = 3.75

    @property
    def ramp_entry_x(self) -> float:
        return -self.l_merge

    @property
    def merge_point_x(self) -> float:
        return 0.0

    def lateral_bounds(self, x: float) -> tuple[float, float]:
        """Drivable band (y_lo, y_hi) at longitudinal station x."""
        hi = 0.5 * self.lane_width
        lo = -1.5 * self.lane_width if x < 0.0 else -0.5 * self.lane_width
        return lo, hi


@dataclass(frozen=True)
class VehicleLimits:
    v_min: float = 0.0
    v_max: float = 25.0
    a_min: float = -3.0
    a_max: float = 3.0
    delta_max: float = math.radians(15.0)
    wheelbase: float = 4.5
    length: float = 4.5
    width: float = 2.0


@dataclass(frozen=True)
class VehicleState:
    """Rear-axle reference pose."""

    x: float
    y: float
    v: float
    phi: float
    road: str = ROAD_MAIN


@dataclass
class ClampStats:
    """Counts out-of-range control inputs that were clamped."""

    accel: int = 0
    steer: int = 0


def bicycle_step(s: VehicleState, a: float, delta: float, dt: float,
                 limits: VehicleLimits = VehicleLimits(),
                 stats: ClampStats | None = None) -> VehicleState:
    """One kinematic bicycle update.

    Position and heading advance with the pre-update speed and heading; the
    speed then integrates the (clamped) acceleration and is clamped to the
    admissible range.  Out-of-range inputs are clamped and counted.
    """
    if not (limits.a_min <= a <= limits.a_max):
        a = min(max(a, limits.a_min), limits.a_max)
        if stats is not None:
            stats.accel += 1
    if abs(delta) > limits.delta_max:
        delta = math.copysign(limits.delta_max, delta)
        if stats is not None:
            stats.steer += 1
    x = s.x + s.v * math.cos(s.phi) * dt
    y = s.y + s.v * math.sin(s.phi) * dt
    phi = s.phi + s.v * delta * dt / limits.wheelbase
    v = min(max(s.v + a * dt, limits.v_min), limits.v_max)
    return replace(s, x=x, y=y, v=v, phi=phi)


def footprint(s: VehicleState, length: float = 4.5, width: float = 2.0) -> np.ndarray:
    """Oriented rectangle corners (4x2) for a rear-axle pose."""
    c, sn = math.cos(s.phi), math.sin(s.phi)
    # rectangle center sits half a length ahead of the rear axle
    cx = s.x + 0.5 * length * c
    cy = s.y + 0.5 * length * sn
    hl, hw = 0.5 * length, 0.5 * width
    corners = np.array([(hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw)])
    rot = np.array([(c, -sn), (sn, c)])
    return corners @ rot.T + (cx, cy)


def _project(corners: np.ndarray, axis: np.ndarray) -> tuple[float, float]:
    p = corners @ axis
    return float(p.min()), float(p.max())


def _axes(corners: np.ndarray):
    for i in range(2):  # a rectangle only has two distinct edge normals
        edge = corners[i + 1] - corners[i]
        yield np.array([-edge[1], edge[0]])


def detect_collision(f1: np.ndarray, f2: np.ndarray) -> bool:
    """Separating-axis test for two oriented rectangles; touching counts as collision."""
    for axis in list(_axes(f1)) + list(_axes(f2)):
        lo1, hi1 = _project(f1, axis)
        lo2, hi2 = _project(f2, axis)
        if hi1 < lo2 or hi2 < lo1:
            return False
    return True


def road_violation(f: np.ndarray, geo: RoadGeometry) -> bool:
    """True when any footprint corner leaves the drivable band at its own station."""
    for cx, cy in f:
        lo, hi = geo.lateral_bounds(cx)
        if cy < lo or cy > hi:
            return True
    return False


def project_1d(x: float, y: float, road: str, geo: RoadGeometry) -> float:
    """Longitudinal position along the vehicle's road, measured to the merge point.

    Both roads are straight and parallel, so the arc length coordinate equals x
    on each of them and is continuous across the MERGE -> MERGING transition.
    """
    del y, geo  # straight parallel roads: the station is x on every road
    if road not in (ROAD_MAIN, ROAD_MERGE, ROAD_MERGING):
        raise ValueError(f"unknown road {road!r}")
    return x


def _segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    ab = b - a
    denom = float(ab @ ab)
    t = 0.0 if denom == 0.0 else float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
    d = p - (a + t * ab)
    return float(math.hypot(d[0], d[1]))


def soft_distance(f1: np.ndarray, f2: np.ndarray) -> float:
    """Minimum gap between two footprints; 0 when they touch or overlap."""
    if detect_collision(f1, f2):
        return 0.0
    best = math.inf
    for fa, fb in ((f1, f2), (f2, f1)):
        for p in fa:
            for i in range(4):
                best = min(best, _segment_distance(p, fb[i], fb[(i + 1) % 4]))
    return best


def soft_edge_distance(f: np.ndarray, geo: RoadGeometry) -> float:
    """Smallest clearance from any corner to the road edge at that corner's station.

    Negative when a corner is already outside the drivable band.
    """
    best = math.inf
    for cx, cy in f:
        lo, hi = geo.lateral_bounds(cx)
        best = min(best, hi - cy, cy - lo)
    return best
