"""Per-packet protocol dissection.

Produces a layered header map: dict of layer name -> dict of parsed fields.
Layers covered: eth, ip (IPv4), tcp, udp, icmp, igmp, dns, dhcp (BOOTP),
ntp, tls (record layer + handshake type), http (start-line signals), stun,
eapol.  A malformed deeper layer is simply absent from the map; only a frame
too short for the Ethernet header aborts the packet.

IPv6 frames are dissected at the Ethernet layer only.
"""

from __future__ import annotations

import struct

from .errors import MalformedPacketError
from .pcap import RawPacket

ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_IPV6 = 0x86DD
ETHERTYPE_EAPOL = 0x888E

_HTTP_METHODS = {
    b"GET": 1,
    b"POST": 2,
    b"HEAD": 3,
    b"PUT": 4,
    b"DELETE": 5,
    b"OPTIONS": 6,
    b"CONNECT": 7,
    b"TRACE": 8,
    b"PATCH": 9,
}

STUN_MAGIC_COOKIE = 0x2112A442


def mac_str(raw: bytes) -> str:
    return ":".join(f"{b:02x}" for b in raw)


def dissect(packet: RawPacket) -> dict:
    """Dissect one Ethernet frame into a layer map.

    Raises MalformedPacketError if the frame is shorter than the 14-byte
    Ethernet header; anything deeper fails soft (layer omitted).
    """
    data = packet.link_bytes
    if len(data) < 14:
        raise MalformedPacketError(f"frame of {len(data)} bytes is below Ethernet minimum")
    ethertype = struct.unpack_from("!H", data, 12)[0]
    layers = {
        "eth": {
            "dst": mac_str(data[0:6]),
            "src": mac_str(data[6:12]),
            "type": ethertype,
            "frame_len": len(data),
        }
    }
    payload = data[14:]
    if ethertype == ETHERTYPE_IPV4:
        _parse_ipv4(payload, layers)
    elif ethertype == ETHERTYPE_EAPOL:
        _parse_eapol(payload, layers)
    return layers


def _parse_ipv4(data: bytes, layers: dict) -> None:
    if len(data) < 20:
        return
    vihl = data[0]
    version = vihl >> 4
    ihl = (vihl & 0x0F) * 4
    if version != 4 or ihl < 20 or len(data) < ihl:
        return
    dsfield = data[1]
    total_len, ident, frag = struct.unpack_from("!HHH", data, 2)
    ttl = data[8]
    proto = data[9]
    checksum = struct.unpack_from("!H", data, 10)[0]
    layers["ip"] = {
        "version": version,
        "hdr_len": ihl,
        "dsfield": dsfield,
        "dscp": dsfield >> 2,
        "ecn": dsfield & 0x03,
        "len": total_len,
        "id": ident,
        "flag_rb": (frag >> 15) & 1,
        "flag_df": (frag >> 14) & 1,
        "flag_mf": (frag >> 13) & 1,
        "frag_offset": frag & 0x1FFF,
        "ttl": ttl,
        "proto": proto,
        "checksum": checksum,
        "src": ".".join(str(b) for b in data[12:16]),
        "dst": ".".join(str(b) for b in data[16:20]),
    }
    # honour the IP total length when the frame carries Ethernet padding
    end = min(len(data), total_len) if total_len >= ihl else len(data)
    body = data[ihl:end]
    if proto == 6:
        _parse_tcp(body, layers)
    elif proto == 17:
        _parse_udp(body, layers)
    elif proto == 1:
        _parse_icmp(body, layers)
    elif proto == 2:
        _parse_igmp(body, layers)


def _parse_tcp(data: bytes, layers: dict) -> None:
    if len(data) < 20:
        return
    srcport, dstport, seq, ack = struct.unpack_from("!HHII", data, 0)
    offset_flags = struct.unpack_from("!H", data, 12)[0]
    hdr_len = (offset_flags >> 12) * 4
    if hdr_len < 20 or len(data) < hdr_len:
        return
    flags = offset_flags & 0x01FF
    window, checksum, urgptr = struct.unpack_from("!HHH", data, 14)
    tcp = {
        "srcport": srcport,
        "dstport": dstport,
        "seq": seq,
        "ack": ack,
        "hdr_len": hdr_len,
        "flags": flags,
        "flag_fin": flags & 1,
        "flag_syn": (flags >> 1) & 1,
        "flag_rst": (flags >> 2) & 1,
        "flag_psh": (flags >> 3) & 1,
        "flag_ack": (flags >> 4) & 1,
        "flag_urg": (flags >> 5) & 1,
        "flag_ece": (flags >> 6) & 1,
        "flag_cwr": (flags >> 7) & 1,
        "window_size": window,
        "checksum": checksum,
        "urgent_pointer": urgptr,
        "options_len": hdr_len - 20,
        "payload_len": len(data) - hdr_len,
    }
    _parse_tcp_options(data[20:hdr_len], tcp)
    layers["tcp"] = tcp
    payload = data[hdr_len:]
    if payload:
        _sniff_tcp_payload(payload, srcport, dstport, layers)


def _parse_tcp_options(opts: bytes, tcp: dict) -> None:
    i = 0
    while i < len(opts):
        kind = opts[i]
        if kind == 0:  # end of options
            break
        if kind == 1:  # NOP
            i += 1
            continue
        if i + 1 >= len(opts):
            break
        length = opts[i + 1]
        if length < 2 or i + length > len(opts):
            break
        if kind == 2 and length == 4:
            tcp["mss"] = struct.unpack_from("!H", opts, i + 2)[0]
        elif kind == 3 and length == 3:
            tcp["wscale"] = opts[i + 2]
        elif kind == 4:
            tcp["sack_perm"] = 1
        i += length


def _sniff_tcp_payload(payload: bytes, srcport: int, dstport: int, layers: dict) -> None:
    if _looks_like_tls(payload):
        _parse_tls(payload, layers)
        return
    if 80 in (srcport, dstport) or 8080 in (srcport, dstport) or _looks_like_http(payload):
        http = _parse_http(payload)
        if http is not None:
            layers["http"] = http


def _looks_like_tls(payload: bytes) -> bool:
    return (
        len(payload) >= 5
        and payload[0] in (20, 21, 22, 23)
        and payload[1] == 3
        and payload[2] <= 4
    )


def _parse_tls(payload: bytes, layers: dict) -> None:
    content_type = payload[0]
    version = struct.unpack_from("!H", payload, 1)[0]
    rec_len = struct.unpack_from("!H", payload, 3)[0]
    tls = {
        "content_type": content_type,
        "version": version,
        "record_len": rec_len,
        "record_count": 0,
    }
    if content_type == 22 and len(payload) >= 6:
        tls["handshake_type"] = payload[5]
    # walk the records present in this segment (bounded, best effort)
    i = 0
    while i + 5 <= len(payload) and payload[i] in (20, 21, 22, 23) and payload[i + 1] == 3:
        tls["record_count"] += 1
        i += 5 + struct.unpack_from("!H", payload, i + 3)[0]
    layers["tls"] = tls


def _looks_like_http(payload: bytes) -> bool:
    if payload.startswith(b"HTTP/"):
        return True
    head = payload.split(b" ", 1)[0]
    return head in _HTTP_METHODS


def _parse_http(payload: bytes):
    http = {"request": 0, "response": 0}
    if payload.startswith(b"HTTP/"):
        http["response"] = 1
        parts = payload.split(b" ", 2)
        if len(parts) >= 2 and parts[1][:3].isdigit():
            http["response_code"] = int(parts[1][:3])
    else:
        method = payload.split(b" ", 1)[0]
        if method not in _HTTP_METHODS:
            return None
        http["request"] = 1
        http["method_class"] = _HTTP_METHODS[method]
    marker = payload.lower().find(b"content-length:")
    if marker >= 0:
        tail = payload[marker + len(b"content-length:"):].split(b"\r\n", 1)[0].strip()
        if tail.isdigit():
            http["content_length"] = int(tail)
    return http


def _parse_udp(data: bytes, layers: dict) -> None:
    if len(data) < 8:
        return
    srcport, dstport, length, checksum = struct.unpack_from("!HHHH", data, 0)
    layers["udp"] = {
        "srcport": srcport,
        "dstport": dstport,
        "length": length,
        "checksum": checksum,
    }
    payload = data[8:]
    if not payload:
        return
    if srcport in (53, 5353) or dstport in (53, 5353):
        _parse_dns(payload, layers)
    elif srcport in (67, 68) or dstport in (67, 68):
        _parse_dhcp(payload, layers)
    elif srcport == 123 or dstport == 123:
        _parse_ntp(payload, layers)
    elif _looks_like_stun(payload) or srcport == 3478 or dstport == 3478:
        _parse_stun(payload, layers)


def _parse_dns(payload: bytes, layers: dict) -> None:
    if len(payload) < 12:
        return
    ident, flags, qd, an, ns, ar = struct.unpack_from("!HHHHHH", payload, 0)
    dns = {
        "id": ident,
        "flags": flags,
        "response": (flags >> 15) & 1,
        "opcode": (flags >> 11) & 0xF,
        "authoritative": (flags >> 10) & 1,
        "truncated": (flags >> 9) & 1,
        "recdesired": (flags >> 8) & 1,
        "recavail": (flags >> 7) & 1,
        "rcode": flags & 0xF,
        "count_queries": qd,
        "count_answers": an,
        "count_auth_rr": ns,
        "count_add_rr": ar,
    }
    pos = _skip_dns_name(payload, 12)
    if qd >= 1 and pos is not None and pos + 4 <= len(payload):
        qtype, qclass = struct.unpack_from("!HH", payload, pos)
        dns["qry_type"] = qtype
        dns["qry_class"] = qclass
        pos += 4
        if an >= 1 and pos is not None:
            pos = _skip_dns_name(payload, pos)
            if pos is not None and pos + 8 <= len(payload):
                rtype, _rclass, rttl = struct.unpack_from("!HHI", payload, pos)
                dns["resp_type"] = rtype
                dns["resp_ttl"] = rttl
    layers["dns"] = dns


def _skip_dns_name(payload: bytes, pos: int):
    while pos < len(payload):
        n = payload[pos]
        if n == 0:
            return pos + 1
        if n & 0xC0 == 0xC0:  # compression pointer ends the name
            return pos + 2
        pos += 1 + n
    return None


def _parse_dhcp(payload: bytes, layers: dict) -> None:
    if len(payload) < 240:
        return
    op, htype, hlen, hops = payload[0], payload[1], payload[2], payload[3]
    secs, flags = struct.unpack_from("!HH", payload, 8)
    if struct.unpack_from("!I", payload, 236)[0] != 0x63825363:
        return
    dhcp = {
        "opcode": op,
        "hw_type": htype,
        "hw_len": hlen,
        "hops": hops,
        "secs": secs,
        "flag_bc": (flags >> 15) & 1,
        "option_count": 0,
    }
    i = 240
    while i < len(payload):
        code = payload[i]
        if code == 255:
            break
        if code == 0:
            i += 1
            continue
        if i + 1 >= len(payload):
            break
        length = payload[i + 1]
        if i + 2 + length > len(payload):
            break
        dhcp["option_count"] += 1
        if code == 53 and length == 1:
            dhcp["msg_type"] = payload[i + 2]
        i += 2 + length
    layers["dhcp"] = dhcp


def _parse_ntp(payload: bytes, layers: dict) -> None:
    if len(payload) < 48:
        return
    b0 = payload[0]
    mode = b0 & 0x7
    vn = (b0 >> 3) & 0x7
    if vn == 0 or vn > 4 or mode == 0:
        return
    rootdelay, rootdisp = struct.unpack_from("!II", payload, 4)
    layers["ntp"] = {
        "li": b0 >> 6,
        "vn": vn,
        "mode": mode,
        "stratum": payload[1],
        "ppoll": struct.unpack_from("!b", payload, 2)[0],
        "precision": struct.unpack_from("!b", payload, 3)[0],
        "rootdelay": rootdelay,
        "rootdispersion": rootdisp,
    }


def _looks_like_stun(payload: bytes) -> bool:
    if len(payload) < 20 or payload[0] & 0xC0:
        return False
    return struct.unpack_from("!I", payload, 4)[0] == STUN_MAGIC_COOKIE


def _parse_stun(payload: bytes, layers: dict) -> None:
    if len(payload) < 20:
        return
    msg_type, msg_len = struct.unpack_from("!HH", payload, 0)
    if payload[0] & 0xC0:
        return
    stun = {"type": msg_type, "length": msg_len, "attr_count": 0}
    i = 20
    end = min(len(payload), 20 + msg_len)
    while i + 4 <= end:
        _attr, alen = struct.unpack_from("!HH", payload, i)
        stun["attr_count"] += 1
        i += 4 + alen + (-alen % 4)  # attributes are 4-byte padded
    layers["stun"] = stun


def _parse_icmp(data: bytes, layers: dict) -> None:
    if len(data) < 4:
        return
    icmp = {
        "type": data[0],
        "code": data[1],
        "checksum": struct.unpack_from("!H", data, 2)[0],
    }
    if data[0] in (0, 8) and len(data) >= 8:
        ident, seq = struct.unpack_from("!HH", data, 4)
        icmp["ident"] = ident
        icmp["seq"] = seq
    layers["icmp"] = icmp


def _parse_igmp(data: bytes, layers: dict) -> None:
    if len(data) < 8:
        return
    layers["igmp"] = {
        "type": data[0],
        "max_resp": data[1],
        "checksum": struct.unpack_from("!H", data, 2)[0],
    }


def _parse_eapol(data: bytes, layers: dict) -> None:
    if len(data) < 4:
        return
    layers["eapol"] = {
        "version": data[0],
        "type": data[1],
        "len": struct.unpack_from("!H", data, 2)[0],
    }
