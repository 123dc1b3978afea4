import math
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from v2xmerge.control import (BEACON_SIZE_BYTES, CTRL_CACC, CTRL_RL,
                              MODE_COLLISION_AVOIDANCE, MODE_GAP,
                              MODE_GAP_CLOSING, MODE_SPEED, BeaconPacket,
                              CaccConfig, NeighborBuffer, NeighborEstimate,
                              cacc_accel, cacc_mode, estimate_neighbor,
                              mode_transition, pack_beacon, select_follower,
                              select_leader, two_point_steering, unpack_beacon)
from v2xmerge.mobility import (ROAD_MAIN, ROAD_MERGE, ROAD_MERGING,
                               RoadGeometry, VehicleState)

GEO = RoadGeometry()
CACC = CaccConfig()


def nb(vid, s, v=20.0):
    return NeighborEstimate(vid=vid, s=s, v=v, y=0.0, theta=0.0, road=ROAD_MAIN, aoi_ms=5)


def test_beacon_roundtrip():
    for road in (ROAD_MAIN, ROAD_MERGE, ROAD_MERGING):
        p = BeaconPacket(42, -123.5, -3.75, 19.25, 0.01, road, 987654)
        raw = pack_beacon(p)
        assert len(raw) == BEACON_SIZE_BYTES
        assert unpack_beacon(raw) == p


finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=100)
@given(st.integers(min_value=0, max_value=2**32 - 1), finite, finite, finite, finite,
       st.sampled_from([ROAD_MAIN, ROAD_MERGE, ROAD_MERGING]),
       st.integers(min_value=-2**63, max_value=2**63 - 1))
def test_beacon_roundtrip_property(vid, x, y, v, theta, road, ts):
    assert unpack_beacon(pack_beacon(BeaconPacket(vid, x, y, v, theta, road, ts))) == \
        BeaconPacket(vid, x, y, v, theta, road, ts)


def test_beacon_wire_layout():
    # little-endian, packed: id u32 | x,y,v,theta f64 | road u8 | ts i64
    raw = pack_beacon(BeaconPacket(7, 1.5, 0.0, 0.0, 0.0, ROAD_MERGE, -5))
    assert len(raw) == 45
    assert raw[0:4] == (7).to_bytes(4, "little")
    assert raw[4:12] == b"\x00\x00\x00\x00\x00\x00\xf8\x3f"  # IEEE-754 of 1.5
    assert raw[36] == 1  # MERGE road code
    assert raw[37:45] == (-5).to_bytes(8, "little", signed=True)
    assert BEACON_SIZE_BYTES == struct.calcsize("<IddddBq")


def test_neighbor_buffer_keeps_latest():
    buf = NeighborBuffer()
    old = BeaconPacket(3, 0.0, 0.0, 10.0, 0.0, ROAD_MAIN, 100)
    new = BeaconPacket(3, 5.0, 0.0, 10.0, 0.0, ROAD_MAIN, 200)
    buf.insert(new)
    buf.insert(old)  # stale packet must not regress the entry
    assert buf.get(3) == new
    buf.insert(BeaconPacket(1, 0.0, 0.0, 0.0, 0.0, ROAD_MAIN, 50))
    assert len(buf) == 2
    assert [p.vid for p in buf.packets()] == [1, 3]


def test_estimate_neighbor_extrapolates():
    p = BeaconPacket(9, -50.0, 0.0, 20.0, 0.0, ROAD_MAIN, 975)
    est = estimate_neighbor(p, now=1000, geo=GEO)
    assert est.aoi_ms == 25
    assert est.s == pytest.approx(-49.5)
    assert est.v == 20.0

    est = estimate_neighbor(p, now=975, geo=GEO)  # zero age: identity
    assert est.s == -50.0

    p = BeaconPacket(9, -50.0, 0.0, 20.0, 0.0, ROAD_MAIN, 996)
    est = estimate_neighbor(p, now=1000, geo=GEO)  # 4 ms delivery floor
    assert est.s == pytest.approx(-50.0 + 0.08)

    with pytest.raises(ValueError):
        estimate_neighbor(p, now=990, geo=GEO)


def test_estimate_exact_for_constant_speed():
    v, x0 = 17.5, -120.0
    for aoi in (4, 20, 100, 999):
        p = BeaconPacket(1, x0, -3.75, v, 0.0, ROAD_MERGE, 5000)
        est = estimate_neighbor(p, now=5000 + aoi, geo=GEO)
        assert est.s == pytest.approx(x0 + v * aoi / 1000.0, abs=1e-12)


def test_select_leader_and_follower():
    ns = [nb(1, -30.0), nb(2, -10.0), nb(3, 5.0)]
    assert select_leader(-20.0, ns).vid == 2
    assert select_follower(-20.0, ns).vid == 1
    assert select_leader(10.0, ns) is None
    assert select_follower(-40.0, ns) is None
    # exact ties go to the lower id
    assert select_leader(-20.0, [nb(7, -10.0), nb(4, -10.0)]).vid == 4
    assert select_follower(0.0, [nb(7, -10.0), nb(4, -10.0)]).vid == 4
    # a neighbor exactly at ego is neither ahead nor behind
    assert select_leader(-10.0, [nb(1, -10.0)]) is None
    assert select_follower(-10.0, [nb(1, -10.0)]) is None


@settings(max_examples=50)
@given(st.lists(st.floats(min_value=-500, max_value=500), max_size=8),
       st.floats(min_value=-500, max_value=500))
def test_leader_strictly_ahead(positions, ego):
    ns = [nb(i, s) for i, s in enumerate(positions)]
    lead = select_leader(ego, ns)
    if lead is not None:
        assert lead.s > ego
        assert all(n.s <= ego or n.s >= lead.s for n in ns)


def test_cacc_speed_mode():
    a, mode = cacc_accel(0.0, 18.0, 0.0, None, CACC)
    assert (a, mode) == (2.0, MODE_SPEED)
    # leaders beyond 100 m are ignored
    a, mode = cacc_accel(0.0, 18.0, 0.0, nb(1, 150.0), CACC)
    assert mode == MODE_SPEED and a == 2.0
    a, _ = cacc_accel(0.0, 24.0, 0.0, None, CACC)
    assert a == -3.0  # k1*(20-24) = -4 clamps


def test_cacc_gap_closing_clamps():
    # gap 30 at v=20: P_err=10, V_err=0, v_d_next=24.5, raw a=45 -> 3.0
    a, mode = cacc_accel(0.0, 20.0, 0.0, nb(1, 30.0, v=20.0), CACC)
    assert mode == MODE_GAP_CLOSING
    assert a == 3.0


def test_cacc_equilibrium():
    a, mode = cacc_accel(0.0, 20.0, 0.0, nb(1, 20.0, v=20.0), CACC)
    assert mode == MODE_GAP
    assert a == 0.0


def test_cacc_collision_avoidance_is_gentle():
    a, mode = cacc_accel(0.0, 20.0, 0.0, nb(1, 15.0, v=20.0), CACC)
    assert mode == MODE_COLLISION_AVOIDANCE
    assert a == pytest.approx(0.005 * -5.0 / 0.1)


def test_cacc_mode_thresholds():
    v = 10.0  # headway distance 10 m
    assert cacc_mode(0.0, v, nb(1, 12.1), CACC) == MODE_GAP_CLOSING
    assert cacc_mode(0.0, v, nb(1, 12.0), CACC) == MODE_GAP
    assert cacc_mode(0.0, v, nb(1, 8.0), CACC) == MODE_GAP
    assert cacc_mode(0.0, v, nb(1, 7.9), CACC) == MODE_COLLISION_AVOIDANCE
    assert cacc_mode(0.0, v, None, CACC) == MODE_SPEED


@settings(max_examples=100)
@given(st.floats(min_value=-400, max_value=400), st.floats(min_value=0, max_value=25),
       st.floats(min_value=-3, max_value=3),
       st.floats(min_value=-400, max_value=400), st.floats(min_value=0, max_value=25))
def test_cacc_always_admissible(ego_s, ego_v, a_prev, lead_s, lead_v):
    a, _ = cacc_accel(ego_s, ego_v, a_prev, nb(1, lead_s, v=lead_v), CACC)
    assert -3.0 <= a <= 3.0


def test_mode_transition_regions():
    assert mode_transition(ROAD_MERGE, -180.0, GEO) == CTRL_CACC
    assert mode_transition(ROAD_MERGE, -175.0, GEO) == CTRL_RL
    assert mode_transition(ROAD_MERGE, -100.0, GEO) == CTRL_RL
    assert mode_transition(ROAD_MERGE, -1e-9, GEO) == CTRL_RL
    assert mode_transition(ROAD_MERGE, 0.0, GEO) == CTRL_CACC
    assert mode_transition(ROAD_MERGING, 2.0, GEO) == CTRL_CACC
    for x in (-300.0, -100.0, 0.0, 50.0):
        assert mode_transition(ROAD_MAIN, x, GEO) == CTRL_CACC


def test_mode_transition_monotone_along_ramp():
    # driving the ramp start to finish flips CACC->RL->CACC exactly once each
    modes = []
    for x in [-220.0 + 0.5 * i for i in range(500)]:
        road = ROAD_MERGE if x < 0 else ROAD_MERGING
        modes.append(mode_transition(road, x, GEO))
    switches = [(a, b) for a, b in zip(modes, modes[1:]) if a != b]
    assert switches == [(CTRL_CACC, CTRL_RL), (CTRL_RL, CTRL_CACC)]


def test_two_point_steering_zero_on_centerline():
    s = VehicleState(x=-50.0, y=0.0, v=20.0, phi=0.0, road=ROAD_MERGING)
    assert two_point_steering(s) == 0.0


def test_two_point_steering_signs_and_clamp():
    below = VehicleState(x=-50.0, y=-3.75, v=20.0, phi=0.0, road=ROAD_MERGE)
    assert two_point_steering(below) > 0.0
    above = VehicleState(x=-50.0, y=3.75, v=20.0, phi=0.0, road=ROAD_MAIN)
    assert two_point_steering(above) == pytest.approx(-two_point_steering(below))
    far = VehicleState(x=-50.0, y=-30.0, v=20.0, phi=0.0, road=ROAD_MERGE)
    assert two_point_steering(far) == math.radians(15.0)


def test_two_point_heading_feedback():
    # aligned offset vs heading error pull in opposite directions
    s = VehicleState(x=0.0, y=0.0, v=20.0, phi=0.2, road=ROAD_MAIN)
    assert two_point_steering(s) == pytest.approx(-0.8 * 0.2)
