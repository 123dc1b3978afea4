"""Reward terms for the on-ramp merging policy.

Three mutually exclusive rewards per control step:

* ``reward_fail``     terminal, on collision or road-boundary violation
* ``reward_success``  terminal, when the ego passes the merging point
* ``reward_running``  dense shaping otherwise (ego posture + interaction
  terms with the 1-D front and rear neighbours)

All angles are radians, distances metres, speeds m/s.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional


class NeighborKin(NamedTuple):
    """Longitudinal gap to a neighbour plus the neighbour's own motion.

    gap is 1-D station distance, always >= 0: for a front neighbour it is
    s_front - s_ego, for a rear neighbour s_ego - s_rear.
    """

    gap: float
    v: float
    phi: float


@dataclass(frozen=True)
class RewardConfig:
    # terminal: fail
    c_fail: float = 50.0
    k_fail_x: float = 4.3
    k_fail_y: float = 4.3
    # terminal: success
    c_success: float = 150.0
    k_succ_y: float = 10.0
    k_succ_theta: float = 10.0
    k_succ_accel: float = 7.5
    k_succ_steer: float = 15.0
    # running: ego posture
    k_ego_x: float = 0.05
    k_ego_y: float = 1.0
    k_ego_theta: float = 1.0
    k_ego_act: float = 2.0
    k_theta_sq: float = 3.0
    k_theta_rate: float = 7.0
    # running: interaction with neighbours
    k_other_pos: float = 5.0
    k_other_vel: float = 0.7
    d_scale: float = 5.0
    headway_s: float = 1.0
    # geometry / actuator ranges used by the normalisers
    l_merge: float = 175.0
    lane_width: float = 3.75
    a_min: float = -3.0
    a_max: float = 3.0
    delta_max: float = math.radians(15.0)


def reward_fail(x: float, y_rear: float, y_front: float, cfg: RewardConfig) -> float:
    """Terminal penalty on collision or leaving the drivable region.

    Scales with how far from the merging point and how far off the lane
    centre the episode ended, so early wild failures cost more than
    near-miss ones.
    """
    return -cfg.c_fail - cfg.k_fail_x * abs(x) - cfg.k_fail_y * (abs(y_rear) + abs(y_front))


def reward_success(y_rear: float, theta: float, accel_sum: float,
                   steer_sum: float, cfg: RewardConfig) -> float:
    """Terminal bonus when the ego crosses the merging point.

    accel_sum / steer_sum are the accumulated absolute commands over the
    whole merging phase; they charge for rough trajectories.
    """
    return (cfg.c_success
            - cfg.k_succ_y * abs(y_rear)
            - cfg.k_succ_theta * abs(theta)
            - cfg.k_succ_accel * accel_sum
            - cfg.k_succ_steer * steer_sum)


def _lateral_dev(y: float, cfg: RewardConfig) -> float:
    # Asymmetric: below centre there is 1.5 lane widths of ramp pavement,
    # above only half a lane, so the same offset is worse on the high side.
    if y < 0.0:
        return abs(y / (1.5 * cfg.lane_width))
    return abs(y / (0.5 * cfg.lane_width))


def _action_fraction(u: float, lo: float, hi: float) -> float:
    # Fraction of the available range used, signed inputs map to [0, 1].
    if u <= 0.0:
        return u / lo
    return u / hi


def _interaction(d: float, dv: float, cfg: RewardConfig) -> float:
    if d < 0.0:
        pos = max(-((d / cfg.d_scale) ** 2), -1.0)
    else:
        pos = math.exp(-d) - 1.0
    vel = math.exp(-abs(dv) - 1.0)
    return cfg.k_other_pos * pos + cfg.k_other_vel * vel


def reward_running(x: float, y_rear: float, y_front: float, v: float, phi: float,
                   phi_prev: float, accel: float, steer: float,
                   front: Optional[NeighborKin], rear: Optional[NeighborKin],
                   cfg: RewardConfig) -> float:
    """Dense shaping reward while the ego is still inside the merging area.

    front / rear are the nearest 1-D neighbours (None when absent; a
    missing neighbour contributes nothing).
    """
    r_x = -abs(x / cfg.l_merge)
    ramp = 1.0 - abs(x / cfg.l_merge)
    r_y = ramp * (_lateral_dev(y_rear, cfg) + _lateral_dev(y_front, cfg))
    r_theta = cfg.k_theta_sq * phi * phi + cfg.k_theta_rate * abs(phi - phi_prev)
    r_act = (_action_fraction(accel, cfg.a_min, cfg.a_max)
             + _action_fraction(steer, -cfg.delta_max, cfg.delta_max))
    r_ego = (cfg.k_ego_x * r_x - cfg.k_ego_y * r_y
             - cfg.k_ego_theta * r_theta - cfg.k_ego_act * r_act)

    r_other = 0.0
    if front is not None:
        d_p = front.gap - cfg.headway_s * v * math.cos(phi)
        dv_p = v * math.cos(phi) - front.v * math.cos(front.phi)
        r_other += _interaction(d_p, dv_p, cfg)
    if rear is not None:
        # mirrored: the rear vehicle's headway requirement uses its own speed
        d_f = rear.gap - cfg.headway_s * rear.v * math.cos(rear.phi)
        dv_f = rear.v * math.cos(rear.phi) - v * math.cos(phi)
        r_other += _interaction(d_f, dv_f, cfg)
    return r_ego + r_other
