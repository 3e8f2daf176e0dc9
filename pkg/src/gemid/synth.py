"""Two-environment synthetic pcap generator with controlled device
signatures and environment shifts.

Device profiles fix the header signature (TTL, TCP window base, payload
size distributions, protocol mix, destination-port habits); environment
profiles shift only timing, flow length, gateway behaviour, and the mix of
control frames.  Confounders planted by plant_confounder add per-packet
fields (source-port base, DSCP code) that encode the device differently in
each environment, so in-partition validation scores them highly while
cross-environment validation exposes them.

Packets are syntactically valid Ethernet/IPv4 frames with correct
checksums and minimal DNS/NTP bodies; this is test scaffolding, not
realistic traffic emulation.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import GemidError
from .ingest import LabelMap, save_labels
from .pcap import PcapWriter
from .util import derive_seed

INVARIANT_FEATURES = ("ip.ttl", "tcp.window_size", "dstport_class")
# udp.srcport is also environment-coded but sits mostly missing (TCP-heavy
# mixes cap its standalone CV kappa), so the ground truth only asserts the
# two features whose gap the generator controls outright
CONFOUNDED_FEATURES = ("ip.dsfield.dscp", "tcp.srcport")


@dataclass(frozen=True)
class DeviceProfile:
    name: str
    mac: str
    ip: str
    ttl: int
    window_base: int
    window_jitter: int
    tcp_len_mean: float
    tcp_len_std: float
    udp_len_base: int
    protocol_mix: dict          # weights over {"tcp", "udp", "dns", "ntp"}
    tcp_ports: tuple            # destination-port habits, environment-independent
    udp_port: int
    dns_qry_type: int
    dns_qname_len: int          # devices query their own cloud hostnames
    dns_queries_per_flow: int
    ntp_ppoll: int
    ntp_burst: int              # iburst-style queries per sync
    udp_flow_pkts: int          # telemetry datagrams per burst
    flow_gap: float             # mean seconds between flows (chattiness)
    packet_gap: float           # mean seconds between packets within a flow
    # planted confounders: per-environment codes, empty when strength == 0
    srcport_env: dict = field(default_factory=dict)
    dscp_env: dict = field(default_factory=dict)
    confounder_strength: float = 0.0

    def signature_fields(self) -> dict:
        """Environment-independent header signature, for the audit."""
        return {
            "ttl": self.ttl, "window_base": self.window_base,
            "window_jitter": self.window_jitter,
            "tcp_len_mean": self.tcp_len_mean, "tcp_len_std": self.tcp_len_std,
            "udp_len_base": self.udp_len_base,
            "protocol_mix": dict(self.protocol_mix),
            "tcp_ports": tuple(self.tcp_ports), "udp_port": self.udp_port,
            "dns_qry_type": self.dns_qry_type,
            "dns_qname_len": self.dns_qname_len,
            "dns_queries_per_flow": self.dns_queries_per_flow,
            "ntp_ppoll": self.ntp_ppoll, "ntp_burst": self.ntp_burst,
            "udp_flow_pkts": self.udp_flow_pkts,
        }


@dataclass(frozen=True)
class EnvironmentProfile:
    """Affects timing, volume, and gateway behaviour only, never the device
    signature fields."""

    name: str
    ia_scale: float
    gateway_latency: float
    flow_len_multiplier: float
    ack_ratio: float            # device control-ACKs per data packet (TCP)
    gateway_window: int
    gateway_ttl: int
    noise_devices: int
    gateway_mac: str = "02:ff:00:00:00:01"


def default_devices(n: int = 8) -> list[DeviceProfile]:
    if n < 4:
        raise GemidError("need at least 4 devices")
    kinds = ["camera", "plug", "hub", "doorbell", "bulb", "speaker", "thermostat", "tv",
             "sensor", "lock", "scale", "vacuum"]
    ttls = [64, 64, 64, 128, 128, 128, 255, 255]
    udp_ports = [5683, 1900, 10101, 56700, 5683, 1900, 10101, 56700]
    qry_types = [1, 28, 16, 12, 1, 28, 16, 12]
    mixes = [
        {"tcp": 0.45, "udp": 0.25, "dns": 0.20, "ntp": 0.10},
        {"tcp": 0.55, "udp": 0.20, "dns": 0.15, "ntp": 0.10},
        {"tcp": 0.40, "udp": 0.30, "dns": 0.25, "ntp": 0.05},
        {"tcp": 0.50, "udp": 0.25, "dns": 0.20, "ntp": 0.05},
    ]
    devices = []
    for i in range(n):
        devices.append(DeviceProfile(
            name=f"{kinds[i % len(kinds)]}-{i:02d}",
            mac=f"02:00:00:00:00:{i + 1:02x}",
            ip=f"192.168.1.{10 + i}",
            ttl=ttls[i % len(ttls)],
            window_base=4096 * (i + 1),
            window_jitter=64,
            tcp_len_mean=160.0 + 55.0 * i,
            tcp_len_std=45.0,
            udp_len_base=90 + 42 * i,
            protocol_mix=mixes[i % len(mixes)],
            tcp_ports=((443,), (80, 443), (8080,), (443, 8883))[i % 4],
            udp_port=udp_ports[i % len(udp_ports)],
            dns_qry_type=qry_types[i % len(qry_types)],
            dns_qname_len=16 + 3 * i,
            dns_queries_per_flow=1 + (i % 3),
            ntp_ppoll=6 + (i % 4),
            ntp_burst=1 + ((i + 1) % 3),
            udp_flow_pkts=2 + (i % 4),
            flow_gap=1.5 + 0.5 * (i % 4),
            packet_gap=0.08 + 0.02 * (i % 3),
        ))
    return devices


def default_environments() -> list[EnvironmentProfile]:
    return [
        EnvironmentProfile("alpha", ia_scale=1.0, gateway_latency=0.002,
                           flow_len_multiplier=1.0, ack_ratio=0.1,
                           gateway_window=8192, gateway_ttl=64, noise_devices=2),
        EnvironmentProfile("beta", ia_scale=23.0, gateway_latency=0.045,
                           flow_len_multiplier=2.5, ack_ratio=0.55,
                           gateway_window=29200, gateway_ttl=255, noise_devices=3),
    ]


def plant_confounder(devices, envs, strength: float, seed: int = 0):
    """Attach per-environment source-port bases and DSCP codes.

    The second environment permutes the device-to-code assignment (a
    rotation, so no device keeps its code), making the features strongly
    label-informative inside each environment and misleading across them.
    `strength` is the per-packet probability of carrying the coded value.
    """
    if not 0.0 <= strength <= 1.0:
        raise GemidError("confounder strength must be in [0, 1]")
    if strength == 0.0:
        return [replace(d, srcport_env={}, dscp_env={}, confounder_strength=0.0)
                for d in devices]
    n = len(devices)
    out = []
    for i, dev in enumerate(devices):
        srcport_env, dscp_env = {}, {}
        for e, env in enumerate(envs):
            code = i if e == 0 else (i + 1) % n
            srcport_env[env.name] = 10000 + 3000 * code
            dscp_env[env.name] = 4 + 6 * code
        out.append(replace(dev, srcport_env=srcport_env, dscp_env=dscp_env,
                           confounder_strength=strength))
    return out


# ----------------------------------------------------------------------
# frame assembly
# ----------------------------------------------------------------------

def _checksum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\x00"
    total = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while total > 0xFFFF:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def _mac_bytes(mac: str) -> bytes:
    return bytes(int(p, 16) for p in mac.split(":"))


def _ip_bytes(ip: str) -> bytes:
    return bytes(int(p) for p in ip.split("."))


def build_frame(src_mac, dst_mac, src_ip, dst_ip, proto, ttl, dscp, ident,
                payload: bytes) -> bytes:
    total_len = 20 + len(payload)
    header = struct.pack("!BBHHHBBH4s4s", 0x45, dscp << 2, total_len, ident,
                         0x4000, ttl, proto, 0, _ip_bytes(src_ip), _ip_bytes(dst_ip))
    header = header[:10] + struct.pack("!H", _checksum(header)) + header[12:]
    return _mac_bytes(dst_mac) + _mac_bytes(src_mac) + b"\x08\x00" + header + payload


def _transport_checksum(src_ip, dst_ip, proto, segment: bytes) -> int:
    pseudo = _ip_bytes(src_ip) + _ip_bytes(dst_ip) + struct.pack("!BBH", 0, proto, len(segment))
    value = _checksum(pseudo + segment)
    return value


def tcp_segment(sport, dport, seq, ack, flags, window, src_ip, dst_ip,
                payload: bytes = b"") -> bytes:
    head = struct.pack("!HHIIBBHHH", sport, dport, seq, ack, 5 << 4, flags,
                       window, 0, 0)
    csum = _transport_checksum(src_ip, dst_ip, 6, head + payload)
    return head[:16] + struct.pack("!H", csum) + head[18:] + payload


def udp_segment(sport, dport, src_ip, dst_ip, payload: bytes) -> bytes:
    length = 8 + len(payload)
    head = struct.pack("!HHHH", sport, dport, length, 0)
    csum = _transport_checksum(src_ip, dst_ip, 17, head + payload)
    if csum == 0:
        csum = 0xFFFF
    return head[:6] + struct.pack("!H", csum) + payload


def dns_query(ident: int, qname: str, qtype: int) -> bytes:
    body = struct.pack("!HHHHHH", ident, 0x0100, 1, 0, 0, 0)
    for part in qname.split("."):
        body += bytes([len(part)]) + part.encode()
    return body + b"\x00" + struct.pack("!HH", qtype, 1)


def dns_response(ident: int, qname: str, qtype: int) -> bytes:
    body = struct.pack("!HHHHHH", ident, 0x8180, 1, 1, 0, 0)
    for part in qname.split("."):
        body += bytes([len(part)]) + part.encode()
    body += b"\x00" + struct.pack("!HH", qtype, 1)
    body += b"\xc0\x0c" + struct.pack("!HHIH", qtype, 1, 300, 4) + b"\x7f\x00\x00\x02"
    return body


def ntp_packet(mode: int, ppoll: int, stratum: int) -> bytes:
    head = struct.pack("!BBbb", (0 << 6) | (4 << 3) | mode, stratum, ppoll, -20)
    return head + struct.pack("!II", 0x400, 0x800) + b"\x00" * 36


# ----------------------------------------------------------------------
# traffic synthesis
# ----------------------------------------------------------------------

_SERVER_POOL = tuple(f"203.0.113.{i}" for i in range(2, 14))


class _DeviceSession:
    """Generates one device's packets within one environment."""

    def __init__(self, dev: DeviceProfile, env: EnvironmentProfile, seed: int):
        self.dev = dev
        self.env = env
        self.rng = np.random.default_rng(seed)
        self.t = float(self.rng.uniform(0.0, 2.0)) * env.ia_scale
        self.ip_id = int(self.rng.integers(0, 50000))
        self.labeled = 0
        self.frames: list[tuple[float, bytes]] = []

    def _next_ip_id(self) -> int:
        self.ip_id = (self.ip_id + 1) % 65536
        return self.ip_id

    def _srcport(self) -> int:
        dev = self.dev
        if dev.srcport_env and self.rng.random() < dev.confounder_strength:
            return dev.srcport_env[self.env.name] + int(self.rng.integers(0, 1000))
        return int(self.rng.integers(20000, 60000))

    def _dscp(self) -> int:
        dev = self.dev
        if dev.dscp_env and self.rng.random() < dev.confounder_strength:
            return dev.dscp_env[self.env.name]
        return 0

    def _emit_device(self, dst_mac, dst_ip, proto, payload, t):
        frame = build_frame(self.dev.mac, dst_mac, self.dev.ip, dst_ip, proto,
                            self.dev.ttl, self._dscp(), self._next_ip_id(), payload)
        self.frames.append((t, frame))
        self.labeled += 1

    def _emit_gateway(self, src_ip, proto, payload, t, ident):
        frame = build_frame(self.env.gateway_mac, self.dev.mac, src_ip, self.dev.ip,
                            proto, self.env.gateway_ttl, 0, ident, payload)
        self.frames.append((t, frame))

    def _window(self) -> int:
        j = self.dev.window_jitter
        return self.dev.window_base + int(self.rng.integers(-j, j + 1))

    def _tcp_payload_len(self) -> int:
        raw = self.rng.normal(self.dev.tcp_len_mean, self.dev.tcp_len_std)
        return int(np.clip(raw, 60, 1400)) - 40  # target IP length minus headers

    def _udp_payload_len(self) -> int:
        raw = self.dev.udp_len_base + self.rng.normal(0.0, 3.0)
        return max(int(raw) - 28, 8)  # target IP length minus headers

    def _gap(self, mean: float) -> float:
        return float(self.rng.exponential(mean)) * self.env.ia_scale

    def run(self, n_packets: int) -> list[tuple[float, bytes]]:
        dev, env, rng = self.dev, self.env, self.rng
        kinds = sorted(dev.protocol_mix)
        weights = np.array([dev.protocol_mix[k] for k in kinds])
        weights = weights / weights.sum()
        while self.labeled < n_packets:
            kind = kinds[int(rng.choice(len(kinds), p=weights))]
            server = _SERVER_POOL[int(rng.integers(0, len(_SERVER_POOL)))]
            getattr(self, f"_flow_{kind}")(server)
            self.t += self._gap(dev.flow_gap)
        return self.frames

    def _flow_tcp(self, server: str) -> None:
        dev, env, rng = self.dev, self.env, self.rng
        sport = self._srcport()
        dport = int(dev.tcp_ports[int(rng.integers(0, len(dev.tcp_ports)))])
        n_data = max(1, int(round(rng.integers(4, 9) * env.flow_len_multiplier)))
        seq = int(rng.integers(1, 2 ** 31))
        peer_seq = int(rng.integers(1, 2 ** 31))
        for _ in range(n_data):
            self.t += self._gap(dev.packet_gap)
            payload = bytes(self._tcp_payload_len())
            seg = tcp_segment(sport, dport, seq, peer_seq, 0x18, self._window(),
                              dev.ip, server, payload)  # PSH|ACK
            self._emit_device(env.gateway_mac, server, 6, seg, self.t)
            seq += len(payload)
            t_reply = self.t + env.gateway_latency
            reply_payload = bytes(int(rng.integers(100, 400)))
            reply = tcp_segment(dport, sport, peer_seq, seq, 0x18,
                                env.gateway_window, server, dev.ip, reply_payload)
            self._emit_gateway(server, 6, reply, t_reply, self._next_ip_id())
            peer_seq += len(reply_payload)
            if rng.random() < env.ack_ratio:
                t_ack = t_reply + 0.0005 * env.ia_scale
                ack = tcp_segment(sport, dport, seq, peer_seq, 0x10,
                                  self._window(), dev.ip, server)
                self._emit_device(env.gateway_mac, server, 6, ack, t_ack)
                self.t = t_ack
            else:
                self.t = t_reply

    def _flow_udp(self, server: str) -> None:
        dev, env, rng = self.dev, self.env, self.rng
        sport = self._srcport()
        n = max(1, int(round(dev.udp_flow_pkts * env.flow_len_multiplier)))
        for _ in range(n):
            self.t += self._gap(dev.packet_gap)
            payload = bytes(self._udp_payload_len())
            seg = udp_segment(sport, dev.udp_port, dev.ip, server, payload)
            self._emit_device(env.gateway_mac, server, 17, seg, self.t)

    def _qname(self) -> str:
        # device hostname of a planted length (suffix ".example.net" = 12)
        label = "h" * max(1, self.dev.dns_qname_len - 12)
        return f"{label}.example.net"

    def _flow_dns(self, server: str) -> None:
        dev, env, rng = self.dev, self.env, self.rng
        sport = self._srcport()
        qname = self._qname()
        for _ in range(dev.dns_queries_per_flow):
            ident = int(rng.integers(0, 65536))
            self.t += self._gap(dev.packet_gap)
            q = dns_query(ident, qname, dev.dns_qry_type)
            self._emit_device(env.gateway_mac, server, 17,
                              udp_segment(sport, 53, dev.ip, server, q), self.t)
            r = dns_response(ident, qname, dev.dns_qry_type)
            self._emit_gateway(server, 17,
                               udp_segment(53, sport, server, dev.ip, r),
                               self.t + env.gateway_latency, self._next_ip_id())

    def _flow_ntp(self, server: str) -> None:
        dev, env, rng = self.dev, self.env, self.rng
        sport = self._srcport()
        for _ in range(dev.ntp_burst):
            self.t += self._gap(dev.packet_gap)
            body = ntp_packet(3, dev.ntp_ppoll, 0)
            self._emit_device(env.gateway_mac, server, 17,
                              udp_segment(sport, 123, dev.ip, server, body), self.t)
            reply = ntp_packet(4, dev.ntp_ppoll, 2)
            self._emit_gateway(server, 17,
                               udp_segment(123, sport, server, dev.ip, reply),
                               self.t + env.gateway_latency, self._next_ip_id())


def _noise_frames(env: EnvironmentProfile, horizon: float, seed: int):
    rng = np.random.default_rng(seed)
    frames = []
    for d in range(env.noise_devices):
        mac = f"02:ee:00:00:00:{d + 1:02x}"
        ip = f"192.168.1.{200 + d}"
        t = float(rng.uniform(0.0, 3.0))
        while t < horizon:
            payload = bytes(int(rng.integers(40, 200)))
            seg = udp_segment(int(rng.integers(30000, 60000)), 1900, ip,
                              "239.255.255.250", payload)
            frames.append((t, build_frame(mac, "01:00:5e:7f:ff:fa", ip,
                                          "239.255.255.250", 17, 4,
                                          0, int(rng.integers(0, 65536)), seg)))
            t += float(rng.exponential(5.0)) * env.ia_scale
    return frames


@dataclass
class SynthResult:
    pcap_paths: dict
    labels_path: Path
    ground_truth_path: Path


def generate(devices, envs, n_packets: int, seed: int, out_dir) -> SynthResult:
    """Write one pcap per environment plus labels.csv and ground_truth.json.

    Byte-identical output for identical inputs and seed; every device
    contributes at least n_packets source-labeled packets per environment.
    """
    macs = [d.mac for d in devices]
    if len(macs) != len(set(macs)):
        raise GemidError("device MAC addresses must be distinct")
    if len(devices) < 4:
        raise GemidError("need at least 4 devices")
    if len(envs) != 2:
        raise GemidError("exactly two environments are generated in v1")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pcap_paths = {}
    for env in envs:
        frames = []
        horizon = 0.0
        for dev in devices:
            session = _DeviceSession(dev, env, derive_seed(seed, "synth", env.name, dev.name))
            frames.extend(session.run(n_packets))
            horizon = max(horizon, session.t)
        frames.extend(_noise_frames(env, horizon, derive_seed(seed, "synthnoise", env.name)))
        frames.sort(key=lambda item: item[0])
        path = out / f"{env.name}.pcap"
        with PcapWriter(path) as writer:
            for t, frame in frames:
                writer.write(t, frame)
        pcap_paths[env.name] = path

    labels_path = out / "labels.csv"
    save_labels(LabelMap(tuple((d.mac, d.name) for d in devices)), labels_path)

    truth = {
        "devices": [d.name for d in devices],
        "environments": [e.name for e in envs],
        "n_packets_per_device": n_packets,
        "seed": seed,
        "confounder_strength": devices[0].confounder_strength if devices else 0.0,
        "invariant_features": list(INVARIANT_FEATURES),
        "confounded_features": list(CONFOUNDED_FEATURES),
        "signatures": {d.name: _jsonable(d.signature_fields()) for d in devices},
    }
    truth_path = out / "ground_truth.json"
    with open(truth_path, "w") as fh:
        json.dump(truth, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return SynthResult(pcap_paths, labels_path, truth_path)


def _jsonable(doc: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in doc.items()}


def audit_environment_independence(devices, envs) -> dict:
    """Per-device signature parameters as seen by each environment.

    Generation reads the same frozen profile in every environment, so the
    per-env views must be equal; callers assert that.  This is a
    parameter-level audit, not a sample-level one.
    """
    return {d.name: {e.name: d.signature_fields() for e in envs} for d in devices}
