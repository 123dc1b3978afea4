import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from v2xmerge.grid import (CYCLE_SUBFRAMES, GridConfig, SsrAddress, a_rssi,
                           absolute_subframe, co_map, from_absolute,
                           selection_window)


def test_absolute_subframe_corners():
    assert absolute_subframe(SsrAddress(0, 0, 0)) == 0
    assert absolute_subframe(SsrAddress(1023, 9, 2)) == 10239
    assert absolute_subframe(SsrAddress(2, 5, 1)) == 25


def test_from_absolute_roundtrip():
    for t in (0, 1, 9, 10, 10239, 10240, 54321):
        addr = from_absolute(t, 2)
        assert absolute_subframe(addr) == t % CYCLE_SUBFRAMES
        assert addr.subchannel == 2


def test_address_validation():
    with pytest.raises(ValueError):
        SsrAddress(1024, 0, 0)
    with pytest.raises(ValueError):
        SsrAddress(0, 10, 0)
    with pytest.raises(ValueError):
        SsrAddress(0, 0, -1)


def test_co_map_examples():
    # 20 ms advances exactly two frames
    assert co_map(SsrAddress(0, 0, 1), 1, 20) == SsrAddress(2, 0, 1)
    # wrap past the SFN boundary: 10235 + 20 mod 10240 = 15
    assert co_map(SsrAddress(1023, 5, 0), 1, 20) == SsrAddress(1, 5, 0)
    assert co_map(SsrAddress(0, 0, 2), 0, 20) == SsrAddress(0, 0, 2)


def test_co_map_rejects_negative_index():
    with pytest.raises(ValueError):
        co_map(SsrAddress(0, 0, 0), -1, 20)


@given(t=st.integers(0, CYCLE_SUBFRAMES - 1), z=st.integers(0, 2),
       i=st.integers(0, 600), j=st.integers(0, 600))
def test_co_map_semigroup(t, z, i, j):
    a = from_absolute(t, z)
    assert co_map(co_map(a, i, 20), j, 20) == co_map(a, i + j, 20)


@given(t=st.integers(0, CYCLE_SUBFRAMES - 1), z=st.integers(0, 4),
       i=st.integers(0, 1000), rsvp=st.sampled_from([20, 40, 100]))
def test_co_map_preserves_subchannel(t, z, i, rsvp):
    assert co_map(from_absolute(t, z), i, rsvp).subchannel == z


def test_selection_window_default():
    cfg = GridConfig()
    win = selection_window(1000, cfg)
    assert len(win) == 51
    assert cfg.m_total == 51
    subs = {absolute_subframe(a) for a in win}
    assert subs == set(range(1004, 1021))
    assert {a.subchannel for a in win} == {0, 1, 2}
    # deterministic subframe-major order
    assert win == sorted(win, key=lambda a: (absolute_subframe(a), a.subchannel))


def test_selection_window_degenerate():
    cfg = GridConfig(sc=1, t1=4, t2=4)
    win = selection_window(0, cfg)
    assert win == [SsrAddress(0, 4, 0)]


def test_selection_window_wraps():
    win = selection_window(10235, GridConfig())
    assert len(win) == 51
    subs = sorted({absolute_subframe(a) for a in win})
    assert subs == sorted(t % CYCLE_SUBFRAMES for t in range(10239, 10256))


@given(now=st.integers(0, 3 * CYCLE_SUBFRAMES))
def test_selection_window_size_invariant(now):
    cfg = GridConfig(sc=2, t1=4, t2=20)
    assert len(selection_window(now, cfg)) == cfg.m_total


def test_grid_config_validation():
    with pytest.raises(ValueError):
        GridConfig(sc=0)
    with pytest.raises(ValueError):
        GridConfig(rsvp_ms=30)  # does not divide 10240
    with pytest.raises(ValueError):
        GridConfig(t1=5, t2=4)
    with pytest.raises(ValueError):
        GridConfig(sensing_ms=990)


def test_a_rssi_constant_history():
    cfg = GridConfig()
    addr = from_absolute(1004, 0)
    samples = {(1004 - 20 * (k + 1), 0): -90.0 for k in range(50)}
    assert a_rssi(addr, samples, cfg) == pytest.approx(-90.0)


def test_a_rssi_linear_domain_mean():
    # 25 samples at -90 and 25 at -80: mean in mW, not in dB
    cfg = GridConfig()
    addr = from_absolute(2000, 1)
    samples = {}
    for k in range(50):
        dbm = -90.0 if k < 25 else -80.0
        samples[(2000 - 20 * (k + 1), 1)] = dbm
    expected = 10.0 * math.log10((1e-9 + 1e-8) / 2.0)
    got = a_rssi(addr, samples, cfg)
    assert got == pytest.approx(expected)
    assert got == pytest.approx(-82.6, abs=0.05)


def test_a_rssi_ignores_other_classes():
    cfg = GridConfig()
    addr = from_absolute(1004, 0)
    samples = {(985, 0): -70.0,   # not congruent mod 20
               (984, 1): -70.0,   # wrong subchannel
               (984, 0): -95.0}
    assert a_rssi(addr, samples, cfg) == pytest.approx(-95.0)


def test_a_rssi_empty():
    assert a_rssi(from_absolute(100, 0), {}, GridConfig()) is None


@given(t=st.integers(1200, 9000), k=st.integers(0, 40))
def test_a_rssi_class_invariance(t, k):
    # every representative of the congruence class reads the same average
    cfg = GridConfig()
    samples = {(t - 20 * (m + 1), 0): -90.0 + (m % 7) for m in range(50)}
    base = a_rssi(from_absolute(t, 0), samples, cfg)
    shifted = a_rssi(co_map(from_absolute(t, 0), k, 20), samples, cfg)
    assert shifted == pytest.approx(base)
