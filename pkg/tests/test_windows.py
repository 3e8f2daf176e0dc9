import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gemid.errors import GemidError
from gemid.flows import PacketInfo
from gemid.windows import (DampedStat, damped_update, default_window_schema,
                           magnitude, window_extract, window_feature_names)


def test_two_inserts_same_timestamp():
    s = DampedStat(lam=3.0)
    damped_update(s, 2.0, 10.0)
    damped_update(s, 4.0, 10.0)
    assert s.w == pytest.approx(2.0, abs=1e-9)
    assert s.mean == pytest.approx(3.0, abs=1e-9)
    assert s.var == pytest.approx(1.0, abs=1e-9)


def test_single_insert():
    s = DampedStat(0.1).update(7.5, 0.0)
    assert s.w == 1.0 and s.mean == 7.5 and s.var == 0.0


def test_contribution_decays_to_zero():
    s = DampedStat(1.0).update(10.0, 0.0)
    assert s.peek_weight(50.0) == pytest.approx(0.0, abs=1e-12)
    assert s.peek_weight(1.0) == pytest.approx(0.5, abs=1e-12)


def test_out_of_order_update_rejected():
    s = DampedStat(1.0).update(1.0, 10.0)
    with pytest.raises(GemidError):
        s.update(1.0, 9.0)


def test_magnitude_hand_case():
    assert magnitude(3.0, 4.0) == pytest.approx(5.0, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(min_value=-100, max_value=100), min_size=1, max_size=30))
def test_no_decay_matches_running_stats(values):
    # with all inserts at one timestamp the decay factor is exactly 1
    s = DampedStat(5.0)
    for v in values:
        s.update(v, 42.0)
    arr = np.array(values)
    assert s.w == pytest.approx(len(values), rel=1e-9)
    assert s.mean == pytest.approx(float(arr.mean()), rel=1e-9, abs=1e-9)
    assert s.var == pytest.approx(float(arr.var()), rel=1e-7, abs=1e-7)


def pkt(ts, src="192.168.1.10", dst="10.0.0.1", sport=5555, dport=443,
        size=100, mac="02:00:00:00:00:01", label="cam"):
    return PacketInfo(ts, mac, src, dst, sport, dport, 6, size, 40, 0x10,
                      500, label)


NAMES = window_feature_names()


def row(rows, i=0):
    return dict(zip(NAMES, rows[i][2]))


def test_first_packet_weights_one_std_zero():
    v = row(window_extract([pkt(0.0)]))
    for lam in ("5", "3", "1", "0.1", "0.01"):
        assert v[f"MI_dir_{lam}_weight"] == 1.0
        assert v[f"MI_dir_{lam}_std"] == 0.0
        assert v[f"HH_{lam}_weight_0"] == 1.0
        assert v[f"HH_jit_{lam}_weight"] == 1.0


def test_equal_sizes_same_timestamp_zero_std():
    rows = window_extract([pkt(1.0, size=300), pkt(1.0, size=300)])
    v = row(rows, 1)
    assert v["HH_5_std_0"] == pytest.approx(0.0, abs=1e-9)
    assert v["HH_5_weight_0"] == pytest.approx(2.0, abs=1e-9)
    assert v["HH_5_mean_0"] == pytest.approx(300.0, abs=1e-9)


def test_magnitude_combines_directions():
    fwd = pkt(0.0, size=300)
    bwd = PacketInfo(0.0, "02:00:00:00:00:99", "10.0.0.1", "192.168.1.10",
                     443, 5555, 6, 400, 40, 0x10, 500, "cam")
    rows = window_extract([fwd, bwd])
    v = row(rows, 1)
    assert v["HH_5_mean_0"] == 400.0
    assert v["HH_5_magnitude_0_1"] == pytest.approx(500.0, abs=1e-9)


def test_jitter_tracks_interarrival():
    rows = window_extract([pkt(0.0), pkt(1.0), pkt(3.0)])
    v = row(rows, 2)
    # jitter inserts 0, 1, 2 with strong decay on earlier mass
    assert v["HH_jit_0.01_weight"] == pytest.approx(
        1 + 2 ** (-0.01 * 2) + 2 ** (-0.01 * 3), abs=1e-6)
    assert v["HH_jit_0.01_mean"] > 0.5


def test_pcc_bounded():
    rng = np.random.default_rng(0)
    packets = []
    t = 0.0
    for i in range(200):
        t += float(rng.exponential(0.1))
        if rng.random() < 0.5:
            packets.append(pkt(t, size=int(rng.integers(60, 1400))))
        else:
            packets.append(PacketInfo(t, "02:00:00:00:00:99", "10.0.0.1",
                                      "192.168.1.10", 443, 5555, 6,
                                      int(rng.integers(60, 1400)), 40, 0x10,
                                      500, "cam"))
    rows = window_extract(packets)
    for _, _, values, _ in rows:
        v = dict(zip(NAMES, values))
        for lam in ("5", "3", "1", "0.1", "0.01"):
            for fam in ("HH", "HpHp"):
                assert -1.0 - 1e-6 <= v[f"{fam}_{lam}_pcc_0_1"] <= 1.0 + 1e-6
                assert v[f"{fam}_{lam}_radius_0_1"] >= 0.0


def test_unlabeled_packets_update_state_but_emit_nothing():
    bwd = PacketInfo(0.0, "02:99:00:00:00:01", "10.0.0.1", "192.168.1.10",
                     443, 5555, 6, 400, 40, 0x10, 500, None)
    rows = window_extract([bwd, pkt(1.0)])
    assert len(rows) == 1
    v = row(rows)
    # reverse direction already has mass, so the combination stats see it
    assert v["HH_5_magnitude_0_1"] > v["HH_5_mean_0"]


def test_schema_has_100_features():
    schema = default_window_schema()
    assert len(schema.active_names) == 100
    assert schema.active_names == NAMES
