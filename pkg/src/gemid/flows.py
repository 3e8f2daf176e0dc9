"""Bidirectional flow statistics (flow-meter style comparison features).

A flow is the packet sequence sharing a canonical 5-tuple, terminated by an
idle timeout (default 120 s) or TCP close (FIN seen in both directions, or
RST).  The forward direction is the direction of the first observed packet,
and the flow label is the device owning the forward source MAC; flows whose
forward source is unlabeled are dropped.

Normative conventions (the upstream tools leave these unstated):
  - packet length = link frame length, times in seconds
  - std/var are sample statistics (ddof=1), 0 when fewer than 2 values
  - zero-duration flows report 0 for all rate features, never infinity
  - subflow counters equal their whole-flow totals (single-subflow rule)
  - activity timeout for active/idle periods defaults to 5 s
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .dissect import dissect
from .errors import MalformedPacketError
from .ingest import ExtractionStats, LabelMap, source_key_for
from .pcap import read_pcap
from .schema import FeatureDescriptor, FeatureSchema

IDLE_TIMEOUT = 120.0
ACTIVITY_TIMEOUT = 5.0

FLOW_FEATURES = (
    "ACK Flag Cnt", "Active Max", "Active Mean", "Active Min", "Active Std",
    "Bwd Header Len", "Bwd IAT Max", "Bwd IAT Mean", "Bwd IAT Min",
    "Bwd IAT Std", "Bwd IAT Tot", "Bwd Pkt Len Mean", "Bwd Pkt Len Min",
    "Bwd Pkts/s", "FIN Flag Cnt", "Flow Byts/s", "Flow Duration",
    "Flow IAT Max", "Flow IAT Mean", "Flow IAT Min", "Flow IAT Std",
    "Fwd Header Len", "Fwd IAT Max", "Fwd IAT Mean", "Fwd IAT Min",
    "Fwd IAT Std", "Fwd IAT Tot", "Fwd Pkt Len Max", "Fwd Pkt Len Mean",
    "Fwd Pkt Len Min", "Fwd Pkt Len Std", "Fwd Pkts/s", "Idle Max",
    "Idle Mean", "Idle Min", "Idle Std", "Init Bwd Win Byts", "Pkt Len Max",
    "Pkt Len Mean", "Pkt Len Min", "Pkt Len Std", "Pkt Len Var",
    "Pkt Size Avg", "Protocol", "Src Port", "Subflow Bwd Byts",
    "Subflow Fwd Byts", "Subflow Fwd Pkts", "Tot Bwd Pkts", "Tot Fwd Pkts",
    "TotLen Bwd Pkts", "TotLen Fwd Pkts",
)

_CATEGORICAL = {"Protocol", "Src Port"}


def default_flow_schema() -> FeatureSchema:
    descs = tuple(
        FeatureDescriptor(n, "FLOW", "categorical" if n in _CATEGORICAL else "numeric")
        for n in FLOW_FEATURES
    )
    return FeatureSchema(descs, family="flow")


@dataclass(frozen=True)
class PacketInfo:
    """The per-packet summary both statistics baselines consume."""

    ts: float
    src_mac: str
    src_ip: str | None
    dst_ip: str | None
    src_port: int | None
    dst_port: int | None
    protocol: int | None
    frame_len: int
    header_len: int
    tcp_flags: int
    tcp_window: int | None
    label: str | None


def packet_info(pkt_ts: float, layers: dict, label: str | None) -> PacketInfo:
    ip = layers.get("ip")
    tcp = layers.get("tcp")
    udp = layers.get("udp")
    header_len = 0
    if ip:
        header_len = ip["hdr_len"] + (tcp["hdr_len"] if tcp else 8 if udp else 0)
    transport = tcp or udp
    return PacketInfo(
        ts=pkt_ts,
        src_mac=layers["eth"]["src"],
        src_ip=ip["src"] if ip else None,
        dst_ip=ip["dst"] if ip else None,
        src_port=transport["srcport"] if transport else None,
        dst_port=transport["dstport"] if transport else None,
        protocol=ip["proto"] if ip else None,
        frame_len=layers["eth"]["frame_len"],
        header_len=header_len,
        tcp_flags=tcp["flags"] if tcp else 0,
        tcp_window=tcp["window_size"] if tcp else None,
        label=label,
    )


def iter_packet_infos(pcap_path, label_map: LabelMap,
                      stats: ExtractionStats | None = None):
    """All parseable packets from a capture, labeled where the source MAC
    is known.  Unlabeled packets are kept: they carry the backward half of
    device flows."""
    by_mac = label_map.by_mac
    stats = stats if stats is not None else ExtractionStats()
    for pkt in read_pcap(pcap_path):
        stats.packets_read += 1
        try:
            layers = dissect(pkt)
        except MalformedPacketError:
            stats.malformed += 1
            continue
        label = by_mac.get(layers["eth"]["src"])
        if label is None:
            stats.unlabeled += 1
        else:
            stats.labeled += 1
        yield packet_info(pkt.timestamp, layers, label)


@dataclass(frozen=True)
class FlowKey:
    """Canonical bidirectional 5-tuple: both directions share one key."""

    endpoint_a: tuple
    endpoint_b: tuple
    protocol: int

    @staticmethod
    def of(info: PacketInfo) -> "FlowKey":
        src = (info.src_ip or "", info.src_port or 0)
        dst = (info.dst_ip or "", info.dst_port or 0)
        a, b = (src, dst) if src <= dst else (dst, src)
        return FlowKey(a, b, info.protocol or 0)


class _Stat:
    """Running min/max/mean/std accumulator (sample std)."""

    __slots__ = ("n", "total", "sq", "lo", "hi")

    def __init__(self):
        self.n = 0
        self.total = 0.0
        self.sq = 0.0
        self.lo = math.inf
        self.hi = -math.inf

    def add(self, v: float) -> None:
        self.n += 1
        self.total += v
        self.sq += v * v
        self.lo = min(self.lo, v)
        self.hi = max(self.hi, v)

    @property
    def mean(self) -> float:
        return self.total / self.n if self.n else 0.0

    @property
    def var(self) -> float:
        if self.n < 2:
            return 0.0
        return max((self.sq - self.total * self.total / self.n) / (self.n - 1), 0.0)

    @property
    def std(self) -> float:
        return math.sqrt(self.var)

    @property
    def minimum(self) -> float:
        return self.lo if self.n else 0.0

    @property
    def maximum(self) -> float:
        return self.hi if self.n else 0.0


class FlowAccumulator:
    """State for one live flow; packets arrive in time order.

    Forward is the direction of the first observed packet unless
    forward_src pins the other endpoint (used by direction-symmetry
    checks).
    """

    def __init__(self, info: PacketInfo, activity_timeout: float = ACTIVITY_TIMEOUT,
                 forward_src: tuple | None = None):
        self.key = FlowKey.of(info)
        self.fwd_src = forward_src if forward_src is not None else (
            info.src_ip or "", info.src_port or 0)
        self.fwd_mac = info.src_mac
        self.label = info.label
        self.protocol = info.protocol or 0
        self.src_port = info.src_port or 0
        self.activity_timeout = activity_timeout

        self.start = info.ts
        self.last_seen = info.ts
        self.fwd_last = None
        self.bwd_last = None

        self.fwd_pkts = 0
        self.bwd_pkts = 0
        self.fwd_bytes = 0
        self.bwd_bytes = 0
        self.fwd_header = 0
        self.bwd_header = 0
        self.fwd_len = _Stat()
        self.bwd_len = _Stat()
        self.all_len = _Stat()
        self.flow_iat = _Stat()
        self.fwd_iat = _Stat()
        self.bwd_iat = _Stat()
        self.active = _Stat()
        self.idle = _Stat()
        self.fin_count = 0
        self.ack_count = 0
        self.fwd_fin = False
        self.bwd_fin = False
        self.saw_rst = False
        self.init_fwd_win = None
        self.init_bwd_win = None
        self._active_start = info.ts
        self._active_end = info.ts

        self._absorb(info, first=True)

    def _absorb(self, info: PacketInfo, first: bool = False) -> None:
        t = info.ts
        forward = (info.src_ip or "", info.src_port or 0) == self.fwd_src
        if not first:
            self.flow_iat.add(t - self.last_seen)
            gap = t - self._active_end
            if gap > self.activity_timeout:
                if self._active_end - self._active_start > 0:
                    self.active.add(self._active_end - self._active_start)
                self.idle.add(gap)
                self._active_start = t
            self._active_end = t
        self.last_seen = t

        self.all_len.add(info.frame_len)
        if info.tcp_flags & 0x01:
            self.fin_count += 1
            if forward:
                self.fwd_fin = True
            else:
                self.bwd_fin = True
        if info.tcp_flags & 0x10:
            self.ack_count += 1
        if info.tcp_flags & 0x04:
            self.saw_rst = True

        if forward:
            self.fwd_pkts += 1
            self.fwd_bytes += info.frame_len
            self.fwd_header += info.header_len
            self.fwd_len.add(info.frame_len)
            if self.fwd_last is not None:
                self.fwd_iat.add(t - self.fwd_last)
            self.fwd_last = t
            if self.init_fwd_win is None and info.tcp_window is not None:
                self.init_fwd_win = info.tcp_window
        else:
            self.bwd_pkts += 1
            self.bwd_bytes += info.frame_len
            self.bwd_header += info.header_len
            self.bwd_len.add(info.frame_len)
            if self.bwd_last is not None:
                self.bwd_iat.add(t - self.bwd_last)
            self.bwd_last = t
            if self.init_bwd_win is None and info.tcp_window is not None:
                self.init_bwd_win = info.tcp_window

    def add(self, info: PacketInfo) -> None:
        self._absorb(info)

    @property
    def finished(self) -> bool:
        return self.saw_rst or (self.fwd_fin and self.bwd_fin)

    def _finalize_active(self) -> None:
        if self._active_end - self._active_start > 0:
            self.active.add(self._active_end - self._active_start)
            self._active_start = self._active_end

    def vector(self) -> list:
        """Emit the feature vector in FLOW_FEATURES order."""
        self._finalize_active()
        duration = self.last_seen - self.start
        total_pkts = self.fwd_pkts + self.bwd_pkts
        total_bytes = self.fwd_bytes + self.bwd_bytes

        def rate(count):
            return count / duration if duration > 0 else 0.0

        values = {
            "ACK Flag Cnt": self.ack_count,
            "Active Max": self.active.maximum,
            "Active Mean": self.active.mean,
            "Active Min": self.active.minimum,
            "Active Std": self.active.std,
            "Bwd Header Len": self.bwd_header,
            "Bwd IAT Max": self.bwd_iat.maximum,
            "Bwd IAT Mean": self.bwd_iat.mean,
            "Bwd IAT Min": self.bwd_iat.minimum,
            "Bwd IAT Std": self.bwd_iat.std,
            "Bwd IAT Tot": self.bwd_iat.total,
            "Bwd Pkt Len Mean": self.bwd_len.mean,
            "Bwd Pkt Len Min": self.bwd_len.minimum,
            "Bwd Pkts/s": rate(self.bwd_pkts),
            "FIN Flag Cnt": self.fin_count,
            "Flow Byts/s": rate(total_bytes),
            "Flow Duration": duration,
            "Flow IAT Max": self.flow_iat.maximum,
            "Flow IAT Mean": self.flow_iat.mean,
            "Flow IAT Min": self.flow_iat.minimum,
            "Flow IAT Std": self.flow_iat.std,
            "Fwd Header Len": self.fwd_header,
            "Fwd IAT Max": self.fwd_iat.maximum,
            "Fwd IAT Mean": self.fwd_iat.mean,
            "Fwd IAT Min": self.fwd_iat.minimum,
            "Fwd IAT Std": self.fwd_iat.std,
            "Fwd IAT Tot": self.fwd_iat.total,
            "Fwd Pkt Len Max": self.fwd_len.maximum,
            "Fwd Pkt Len Mean": self.fwd_len.mean,
            "Fwd Pkt Len Min": self.fwd_len.minimum,
            "Fwd Pkt Len Std": self.fwd_len.std,
            "Fwd Pkts/s": rate(self.fwd_pkts),
            "Idle Max": self.idle.maximum,
            "Idle Mean": self.idle.mean,
            "Idle Min": self.idle.minimum,
            "Idle Std": self.idle.std,
            "Init Bwd Win Byts": self.init_bwd_win if self.init_bwd_win is not None else 0,
            "Pkt Len Max": self.all_len.maximum,
            "Pkt Len Mean": self.all_len.mean,
            "Pkt Len Min": self.all_len.minimum,
            "Pkt Len Std": self.all_len.std,
            "Pkt Len Var": self.all_len.var,
            "Pkt Size Avg": total_bytes / total_pkts if total_pkts else 0.0,
            "Protocol": self.protocol,
            "Src Port": self.src_port,
            "Subflow Bwd Byts": self.bwd_bytes,
            "Subflow Fwd Byts": self.fwd_bytes,
            "Subflow Fwd Pkts": self.fwd_pkts,
            "Tot Bwd Pkts": self.bwd_pkts,
            "Tot Fwd Pkts": self.fwd_pkts,
            "TotLen Bwd Pkts": self.bwd_bytes,
            "TotLen Fwd Pkts": self.fwd_bytes,
        }
        return [values[name] for name in FLOW_FEATURES]


def flow_extract(infos, idle_timeout: float = IDLE_TIMEOUT,
                 activity_timeout: float = ACTIVITY_TIMEOUT):
    """Assemble flows from a time-ordered packet stream.

    Returns (source_key, start_ts, values, label) rows ordered by flow
    start time.  Packets without an IP layer are ignored; flows with an
    unlabeled forward source are dropped at emission.
    """
    live: dict[FlowKey, FlowAccumulator] = {}
    done: list[FlowAccumulator] = []
    for info in infos:
        if info.src_ip is None:
            continue
        key = FlowKey.of(info)
        flow = live.get(key)
        if flow is not None and info.ts - flow.last_seen > idle_timeout:
            done.append(flow)
            flow = None
        if flow is None:
            live[key] = FlowAccumulator(info, activity_timeout)
            continue
        flow.add(info)
        if flow.finished:
            done.append(live.pop(key))
    done.extend(live.values())
    done.sort(key=lambda f: (f.start, f.key.endpoint_a, f.key.endpoint_b, f.key.protocol))

    rows = []
    for flow in done:
        if flow.label is None:
            continue
        rows.append((source_key_for(flow.fwd_mac), flow.start, flow.vector(), flow.label))
    return rows
