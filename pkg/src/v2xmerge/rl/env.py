"""Training environment for the on-ramp merging policy.

A straight main road carries CACC platooning traffic; one or more ramp
vehicles approach on the acceleration lane. Inside the merging area
(between the ramp entry P and the merge point O) the ramp vehicle is
driven by an external policy through ``step(actions)``; everywhere else
the four-mode CACC controller plus two-point steering applies.

Training uses perfect neighbour information (zero age), which is the
upper envelope of what the communication stack delivers.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..control import (CTRL_RL, CaccConfig, NeighborEstimate, TwoPointConfig,
                       cacc_accel, mode_transition, two_point_steering)
from ..mobility import (ROAD_MAIN, ROAD_MERGE, ROAD_MERGING, RoadGeometry,
                        VehicleLimits, VehicleState, bicycle_step, detect_collision,
                        footprint, project_1d, road_violation)
from .rewards import NeighborKin, RewardConfig, reward_fail, reward_running, reward_success

SENTINEL_GAP = 100.0  # reported gap when no neighbour exists on that side

OUTCOME_SUCCESS = "success"
OUTCOME_COLLISION = "collision"
OUTCOME_OFF_ROAD = "off_road"
OUTCOME_TIMEOUT = "timeout"


def build_state(ego: VehicleState, wheelbase: float,
                front: Optional[NeighborKin], rear: Optional[NeighborKin]) -> np.ndarray:
    """Policy observation: ego pose plus relative motion of the 1-D neighbours.

    Missing neighbours are encoded with a +/-100 m gap and zero relative
    speed, which continuously extends the far-away case.
    """
    y_front = ego.y + math.sin(ego.phi) * wheelbase
    v_long = ego.v * math.cos(ego.phi)
    if front is not None:
        dx_front = front.gap
        dv_front = v_long - front.v * math.cos(front.phi)
    else:
        dx_front, dv_front = SENTINEL_GAP, 0.0
    if rear is not None:
        dx_rear = -rear.gap
        dv_rear = rear.v * math.cos(rear.phi) - v_long
    else:
        dx_rear, dv_rear = -SENTINEL_GAP, 0.0
    return np.array([ego.x, ego.y, y_front, ego.v, ego.phi,
                     dx_front, dv_front, dx_rear, dv_rear], dtype=np.float64)


@dataclass
class TrainEnvConfig:
    geo: RoadGeometry = field(default_factory=RoadGeometry)
    limits: VehicleLimits = field(default_factory=VehicleLimits)
    cacc: CaccConfig = field(default_factory=CaccConfig)
    steering: TwoPointConfig = field(default_factory=TwoPointConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    density_min: float = 28.0           # veh/km on the main road
    density_max: float = 35.0
    main_x_max: float = 50.0            # main traffic seeded over [x_max-span, x_max]
    main_span_m: float = 375.0
    ramp_count: int = 2
    ramp_x_max: float = -220.0          # ramp vehicles seeded behind this, inside
    ramp_gap_m: float = 80.0            # the adjusting area, this far apart
    v_main_min: float = 18.0
    v_main_max: float = 22.0
    v_ramp_min: float = 15.0
    v_ramp_max: float = 25.0
    min_headway_m: float = 12.0         # bumper spacing floor when seeding
    exit_x: float = 400.0
    dt: float = 0.1
    max_steps: int = 600
    baseline: bool = False              # drive the merging area with CACC + steering


@dataclass
class _Vehicle:
    vid: int
    state: VehicleState
    a_prev: float = 0.0
    accel_abs_sum: float = 0.0          # accumulated over the merging phase
    steer_abs_sum: float = 0.0


class MergingEnv:
    """Multi-vehicle merging scenario with gym-style reset/step."""

    def __init__(self, cfg: TrainEnvConfig):
        self.cfg = cfg
        self.rng: np.random.Generator = np.random.default_rng(0)
        self.vehicles: Dict[int, _Vehicle] = {}
        self.rl_active: List[int] = []
        self.ramp_pending: set[int] = set()
        self.steps = 0
        self.outcomes: Dict[int, str] = {}
        # per-step motion of policy-controlled vehicles, for smoothness metrics
        self.last_rl_motion: Dict[int, Tuple[float, float, float, float]] = {}

    # -- seeding ------------------------------------------------------------

    def reset(self, seed: int) -> Dict[int, np.ndarray]:
        cfg = self.cfg
        self.rng = np.random.default_rng(seed)
        self.vehicles = {}
        self.rl_active = []
        self.ramp_pending = set()
        self.outcomes = {}
        self.steps = 0
        self.last_rl_motion = {}
        vid = 0
        density = self.rng.uniform(cfg.density_min, cfg.density_max)
        spacing = 1000.0 / density
        x = cfg.main_x_max
        while x > cfg.main_x_max - cfg.main_span_m:
            v0 = self.rng.uniform(cfg.v_main_min, cfg.v_main_max)
            self.vehicles[vid] = _Vehicle(vid, VehicleState(x, 0.0, v0, 0.0, ROAD_MAIN))
            vid += 1
            gap = spacing * self.rng.uniform(0.8, 1.2)
            x -= max(gap, cfg.min_headway_m + cfg.limits.length)
        ramp_x = cfg.ramp_x_max - self.rng.uniform(0.0, 20.0)
        for _ in range(cfg.ramp_count):
            v0 = self.rng.uniform(cfg.v_ramp_min, cfg.v_ramp_max)
            s = VehicleState(ramp_x, -cfg.geo.lane_width, v0, 0.0, ROAD_MERGE)
            self.vehicles[vid] = _Vehicle(vid, s)
            self.ramp_pending.add(vid)
            vid += 1
            ramp_x -= cfg.ramp_gap_m + self.rng.uniform(0.0, 20.0)
        self._promote()
        return self._observations()

    # -- neighbour search ---------------------------------------------------

    def _sorted_stations(self) -> List[Tuple[float, int]]:
        geo = self.cfg.geo
        rows = [(project_1d(v.state.x, v.state.y, v.state.road, geo), v.vid)
                for v in self.vehicles.values()]
        rows.sort()
        return rows

    def _neighbors(self, vid: int, rows: List[Tuple[float, int]]
                   ) -> Tuple[Optional[NeighborKin], Optional[NeighborKin]]:
        idx = next(i for i, (_, w) in enumerate(rows) if w == vid)
        s_ego = rows[idx][0]
        front = rear = None
        if idx + 1 < len(rows):
            s, w = rows[idx + 1]
            n = self.vehicles[w].state
            front = NeighborKin(s - s_ego, n.v, n.phi)
        if idx > 0:
            s, w = rows[idx - 1]
            n = self.vehicles[w].state
            rear = NeighborKin(s_ego - s, n.v, n.phi)
        return front, rear

    def _leader_estimate(self, vid: int, rows: List[Tuple[float, int]]
                         ) -> Optional[NeighborEstimate]:
        idx = next(i for i, (_, w) in enumerate(rows) if w == vid)
        if idx + 1 >= len(rows):
            return None
        s, w = rows[idx + 1]
        n = self.vehicles[w].state
        return NeighborEstimate(w, s, n.v, n.y, n.phi, n.road, 0)

    # -- stepping -----------------------------------------------------------

    def _cacc_command(self, veh: _Vehicle, rows) -> Tuple[float, float]:
        cfg = self.cfg
        s_ego = project_1d(veh.state.x, veh.state.y, veh.state.road, cfg.geo)
        leader = self._leader_estimate(veh.vid, rows)
        a, _ = cacc_accel(s_ego, veh.state.v, veh.a_prev, leader, cfg.cacc)
        target_y = -cfg.geo.lane_width if veh.state.road == ROAD_MERGE else 0.0
        delta = two_point_steering(veh.state, cfg.steering, target_y=target_y)
        return a, delta

    def step(self, actions: Dict[int, Tuple[float, float]]):
        """Advance one control period.

        Returns (observations, rewards, outcomes, done). rewards and
        outcomes only cover vehicles that were policy-controlled when the
        step began; outcome None means the episode continues for that
        vehicle.
        """
        cfg = self.cfg
        rows = self._sorted_stations()
        acting = list(self.rl_active)
        phi_before = {vid: self.vehicles[vid].state.phi for vid in acting}

        commands: Dict[int, Tuple[float, float]] = {}
        for veh in self.vehicles.values():
            if veh.vid in self.rl_active and not cfg.baseline:
                commands[veh.vid] = actions[veh.vid]
            elif veh.vid in self.rl_active:
                s_ego = project_1d(veh.state.x, veh.state.y, veh.state.road, cfg.geo)
                leader = self._leader_estimate(veh.vid, rows)
                a, _ = cacc_accel(s_ego, veh.state.v, veh.a_prev, leader, cfg.cacc)
                commands[veh.vid] = (a, two_point_steering(veh.state, cfg.steering))
            else:
                commands[veh.vid] = self._cacc_command(veh, rows)

        for veh in self.vehicles.values():
            a, delta = commands[veh.vid]
            a = min(max(a, cfg.limits.a_min), cfg.limits.a_max)
            delta = min(max(delta, -cfg.limits.delta_max), cfg.limits.delta_max)
            commands[veh.vid] = (a, delta)
            veh.state = bicycle_step(veh.state, a, delta, cfg.dt, cfg.limits)
            veh.a_prev = a
            if veh.vid in self.rl_active:
                veh.accel_abs_sum += abs(a)
                veh.steer_abs_sum += abs(delta)

        crossed = set()
        for veh in self.vehicles.values():
            if veh.state.road == ROAD_MERGE and veh.state.x >= cfg.geo.merge_point_x:
                veh.state = replace(veh.state, road=ROAD_MERGING)
                crossed.add(veh.vid)

        self.last_rl_motion = {
            vid: (commands[vid][0], commands[vid][1],
                  self.vehicles[vid].state.phi, self.vehicles[vid].state.x)
            for vid in acting
        }

        self.steps += 1
        rewards: Dict[int, float] = {}
        outcomes: Dict[int, Optional[str]] = {}
        rows_after = self._sorted_stations()
        removed = []
        for vid in acting:
            veh = self.vehicles[vid]
            st = veh.state
            y_front = st.y + math.sin(st.phi) * cfg.limits.wheelbase
            fail = None
            ego_fp = footprint(st, cfg.limits.length, cfg.limits.width)
            for other in self.vehicles.values():
                if other.vid == vid or abs(other.state.x - st.x) > 15.0:
                    continue
                if detect_collision(ego_fp, footprint(other.state, cfg.limits.length,
                                                      cfg.limits.width)):
                    fail = OUTCOME_COLLISION
                    break
            if fail is None and road_violation(ego_fp, cfg.geo):
                fail = OUTCOME_OFF_ROAD
            if fail is None and self.steps >= cfg.max_steps and vid not in crossed:
                fail = OUTCOME_TIMEOUT
            if fail is not None:
                rewards[vid] = reward_fail(st.x, st.y, y_front, cfg.reward)
                outcomes[vid] = fail
                self.outcomes[vid] = fail
                removed.append(vid)
            elif vid in crossed:
                rewards[vid] = reward_success(st.y, st.phi, veh.accel_abs_sum,
                                              veh.steer_abs_sum, cfg.reward)
                outcomes[vid] = OUTCOME_SUCCESS
                self.outcomes[vid] = OUTCOME_SUCCESS
                self.rl_active.remove(vid)
                self.ramp_pending.discard(vid)
            else:
                a, delta = commands[vid]
                front, rear = self._neighbors(vid, rows_after)
                rewards[vid] = reward_running(st.x, st.y, y_front, st.v, st.phi,
                                              phi_before[vid], a, delta,
                                              front, rear, cfg.reward)
                outcomes[vid] = None

        for vid in removed:
            del self.vehicles[vid]
            self.rl_active.remove(vid)
            self.ramp_pending.discard(vid)

        # a stalled episode fails every unresolved ramp vehicle at its pose
        if self.steps >= cfg.max_steps:
            for vid in sorted(self.ramp_pending - set(self.rl_active)):
                self.ramp_pending.discard(vid)
                self.outcomes[vid] = OUTCOME_TIMEOUT

        for veh in list(self.vehicles.values()):
            if veh.state.x > cfg.exit_x:
                del self.vehicles[veh.vid]

        self._promote()
        done = not self.ramp_pending or self.steps >= cfg.max_steps
        return self._observations(), rewards, outcomes, done

    def _promote(self) -> None:
        for vid in sorted(self.ramp_pending):
            veh = self.vehicles.get(vid)
            if veh is None:
                self.ramp_pending.discard(vid)
                continue
            if vid not in self.rl_active and \
                    mode_transition(veh.state.road, veh.state.x, self.cfg.geo) == CTRL_RL:
                self.rl_active.append(vid)
                veh.accel_abs_sum = 0.0
                veh.steer_abs_sum = 0.0

    def _observations(self) -> Dict[int, np.ndarray]:
        rows = self._sorted_stations()
        obs = {}
        for vid in self.rl_active:
            front, rear = self._neighbors(vid, rows)
            obs[vid] = build_state(self.vehicles[vid].state,
                                   self.cfg.limits.wheelbase, front, rear)
        return obs
