import pytest
from hypothesis import given, strategies as st

from gemid.dissect import dissect
from gemid.errors import MalformedPacketError
from gemid.headers import (PORT_ALLOW_LIST, default_header_schema, dstport_class,
                           extract_features)
from gemid.pcap import RawPacket
from gemid.schema import rule_filter

from conftest import eth_header, ipv4_header, tcp_header, udp_header


def raw(frame: bytes) -> RawPacket:
    return RawPacket(0.0, frame, len(frame), len(frame))


def test_tcp_fixture_layers_and_fields(tcp_frame):
    layers = dissect(raw(tcp_frame))
    assert set(layers) == {"eth", "ip", "tcp"}
    assert layers["ip"]["ttl"] == 64
    assert layers["ip"]["len"] == 40
    assert layers["ip"]["flag_df"] == 1
    assert layers["tcp"]["window_size"] == 65535
    assert layers["tcp"]["dstport"] == 443
    assert layers["tcp"]["seq"] == 1000
    assert layers["tcp"]["flag_psh"] == 1 and layers["tcp"]["flag_ack"] == 1


def test_dns_fixture_fields(dns_frame):
    layers = dissect(raw(dns_frame))
    assert "dns" in layers and "udp" in layers
    assert layers["dns"]["response"] == 0
    assert layers["dns"]["count_queries"] == 1
    assert layers["dns"]["qry_type"] == 1
    assert layers["dns"]["qry_class"] == 1
    assert layers["udp"]["dstport"] == 53


def test_short_frame_is_malformed():
    with pytest.raises(MalformedPacketError):
        dissect(raw(b"\x00" * 10))


def test_malformed_deeper_layer_fails_soft():
    # IP header claims protocol TCP but the segment is 4 bytes long
    frame = eth_header() + ipv4_header(total_len=24) + b"\x00\x01\x02\x03"
    layers = dissect(raw(frame))
    assert "ip" in layers and "tcp" not in layers


def test_eapol_frame():
    frame = eth_header(ethertype=0x888E) + bytes([1, 0, 0, 5]) + b"\x00" * 5
    layers = dissect(raw(frame))
    assert layers["eapol"] == {"version": 1, "type": 0, "len": 5}
    assert "ip" not in layers


def test_dstport_class_documented_mapping():
    assert dstport_class(None) == 0
    # allow-list ports map to 1..9 in documented list order
    for i, port in enumerate(PORT_ALLOW_LIST):
        assert dstport_class(port) == i + 1
    assert dstport_class(443) == 6
    assert dstport_class(22) == 10
    assert dstport_class(8443) == 11
    assert dstport_class(50000) == 12
    assert dstport_class(65535) == 12


@given(st.one_of(st.none(), st.integers(min_value=0, max_value=65535)))
def test_dstport_class_total_and_pure(port):
    first = dstport_class(port)
    assert first in range(13)
    assert dstport_class(port) == first


def test_extract_features_tcp_fixture(tcp_frame):
    schema = rule_filter(default_header_schema())
    layers = dissect(raw(tcp_frame))
    values = dict(zip(schema.active_names, extract_features(layers, schema)))
    assert values["ip.len"] == 40
    assert values["ip.ttl"] == 64
    assert values["ip.flags.df"] == 1
    assert values["tcp.seq"] == 1000
    assert values["tcp.ack"] == 2000
    assert values["tcp.window_size"] == 65535
    assert values["dstport_class"] == 6
    assert all(values[n] is None for n in values if n.startswith(("dns.", "ntp.", "dhcp.")))


def test_extract_features_deterministic(tcp_frame):
    schema = rule_filter(default_header_schema())
    layers = dissect(raw(tcp_frame))
    assert extract_features(layers, schema) == extract_features(layers, schema)


def test_missing_iff_layer_absent(dns_frame):
    schema = rule_filter(default_header_schema())
    layers = dissect(raw(dns_frame))
    values = dict(zip(schema.active_names, extract_features(layers, schema)))
    for name, value in values.items():
        proto = name.split(".")[0]
        if proto == "dns":
            assert value is not None or name in ("dns.resp.type", "dns.resp.ttl")
        if proto == "tcp":
            assert value is None


def test_udp_ports_in_tables():
    frame = eth_header() + ipv4_header(proto=17, total_len=28) + udp_header(dport=50000)
    layers = dissect(raw(frame))
    schema = rule_filter(default_header_schema())
    values = dict(zip(schema.active_names, extract_features(layers, schema)))
    assert values["udp.dstport"] == 50000
    assert values["dstport_class"] == 12
    assert values["srcport_class"] == 11
