"""Shared fixtures: hand-built pcap bytes, packet fixtures, and small
in-memory partitions with controlled feature behaviour."""

from __future__ import annotations

import struct

import numpy as np
import pytest

from gemid.ingest import PacketRecord, Partition


def write_pcap_file(path, packets, swapped=False):
    """Independent pcap writer used to build reader fixtures.

    `packets` is a list of (ts_sec, ts_usec, frame_bytes).  Deliberately
    not implemented via gemid.pcap so reader tests have an outside oracle.
    """
    endian = ">" if swapped else "<"
    with open(path, "wb") as fh:
        fh.write(struct.pack(endian + "IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, 1))
        for ts_sec, ts_usec, data in packets:
            fh.write(struct.pack(endian + "IIII", ts_sec, ts_usec, len(data), len(data)))
            fh.write(data)
    return path


def eth_header(src="02:00:00:00:00:01", dst="02:00:00:00:00:99", ethertype=0x0800):
    def mac(m):
        return bytes(int(x, 16) for x in m.split(":"))

    return mac(dst) + mac(src) + struct.pack("!H", ethertype)


def ipv4_header(src="192.168.1.10", dst="10.0.0.1", proto=6, ttl=64,
                total_len=40, ident=7, dscp=0, flags_frag=0x4000):
    def ip(a):
        return bytes(int(x) for x in a.split("."))

    return struct.pack("!BBHHHBBH4s4s", 0x45, dscp << 2, total_len, ident,
                       flags_frag, ttl, proto, 0xBEEF, ip(src), ip(dst))


def tcp_header(sport=12345, dport=443, seq=1000, ack=2000, flags=0x18,
               window=65535):
    return struct.pack("!HHIIBBHHH", sport, dport, seq, ack, 5 << 4, flags,
                       window, 0xCAFE, 0)


def udp_header(sport=40000, dport=53, length=None, payload=b""):
    length = length if length is not None else 8 + len(payload)
    return struct.pack("!HHHH", sport, dport, length, 0x1234) + payload


@pytest.fixture
def tcp_frame():
    """Hand-assembled TCP/IPv4 frame: ttl=64, window=65535, dport=443."""
    return eth_header() + ipv4_header(total_len=40) + tcp_header()


@pytest.fixture
def dns_frame():
    """Hand-assembled DNS A query for example.com over UDP/53."""
    dns = struct.pack("!HHHHHH", 0x1234, 0x0100, 1, 0, 0, 0)
    dns += b"\x07example\x03com\x00" + struct.pack("!HH", 1, 1)
    ip = ipv4_header(proto=17, total_len=20 + 8 + len(dns))
    return eth_header() + ip + udp_header(payload=dns)


def make_partition(name, family, session, values_by_record, labels,
                   source_keys=None, ts0=0.0):
    """Partition from raw value rows; values_by_record is a list of tuples."""
    records = []
    for i, (vals, label) in enumerate(zip(values_by_record, labels)):
        sk = source_keys[i] if source_keys else f"src-{label}"
        records.append(PacketRecord(name, session, sk, ts0 + 0.01 * i,
                                    tuple(vals), label, seq=i))
    return Partition(name, family, session, tuple(records))


def two_env_partitions(n_per_class=120, seed=0, coupled=True):
    """Four partitions (2 families x 2 sessions) with three features:

    - "good": deterministic function of the label everywhere
    - "noise": pure noise everywhere
    - "coupled": label-coded in family A, differently coded in family B
    """
    rng = np.random.default_rng(seed)
    classes = ["cam", "hub", "plug"]
    partitions = []
    for family, shift in (("A", 0), ("B", 1)):
        for session in ("s1", "s2"):
            values, labels = [], []
            for ci, cls in enumerate(classes):
                for _ in range(n_per_class):
                    good = 10.0 * ci + rng.normal(0, 0.5)
                    noise = rng.normal(0, 1)
                    code = (ci + shift) % len(classes) if coupled else ci
                    coupled_val = 5.0 * code + rng.normal(0, 0.3)
                    values.append((good, noise, coupled_val))
                    labels.append(cls)
            order = rng.permutation(len(labels))
            values = [values[i] for i in order]
            labels = [labels[i] for i in order]
            partitions.append(make_partition(f"{family}-{session}", family,
                                             session, values, labels))
    return partitions, ("good", "noise", "coupled")
