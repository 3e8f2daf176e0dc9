"""Header feature extraction: maps dissected layers onto the header catalog.

The shipped catalog (schemas/header_schema.json) covers numeric, flag and
small-integer categorical fields across ETH/IP/TCP/UDP/ICMP/IGMP/DNS/DHCP/
NTP/TLS/HTTP/STUN/EAPOL plus derived port-class features.  Address-bearing
fields are present in the catalog so the filtering step can mark them, but
their values never reach a feature table.
"""

from __future__ import annotations

from .schema import FeatureDescriptor, FeatureSchema

# Well-known ports that get a dedicated class, in documented order.
PORT_ALLOW_LIST = (53, 67, 68, 80, 123, 443, 1900, 5353, 8080)
_PORT_CLASS = {p: i + 1 for i, p in enumerate(PORT_ALLOW_LIST)}


def dstport_class(port) -> int:
    """Total, pure mapping of a destination/source port to a small class id.

    None -> 0; allow-listed ports -> 1..9 in list order; other well-known
    ports (0..1023) -> 10; registered (1024..49151) -> 11; dynamic -> 12.
    """
    if port is None:
        return 0
    port = int(port)
    if port in _PORT_CLASS:
        return _PORT_CLASS[port]
    if port <= 1023:
        return 10
    if port <= 49151:
        return 11
    return 12


def _port_of(layers: dict, which: str):
    transport = layers.get("tcp") or layers.get("udp")
    return transport[which] if transport else None


# name -> (protocol tag, kind, getter).  Getter returns None when the
# owning layer is absent or the field was not present in it.
def _layer_field(layer: str, key: str):
    return lambda L: L[layer].get(key) if layer in L else None


_CATALOG: list[tuple[str, str, str]] = []
_GETTERS = {}


def _def(name: str, protocol: str, kind: str, getter) -> None:
    _CATALOG.append((name, protocol, kind))
    _GETTERS[name] = getter


_def("frame.len", "ETH", "numeric", _layer_field("eth", "frame_len"))
_def("eth.type", "ETH", "categorical", _layer_field("eth", "type"))
_def("eth.src", "ETH", "string", _layer_field("eth", "src"))
_def("eth.dst", "ETH", "string", _layer_field("eth", "dst"))

for _n, _k, _kind in [
    ("version", "version", "categorical"), ("hdr_len", "hdr_len", "numeric"),
    ("dsfield", "dsfield", "numeric"), ("dsfield.dscp", "dscp", "numeric"),
    ("dsfield.ecn", "ecn", "numeric"), ("len", "len", "numeric"),
    ("id", "id", "numeric"), ("flags.rb", "flag_rb", "flag"),
    ("flags.df", "flag_df", "flag"), ("flags.mf", "flag_mf", "flag"),
    ("frag_offset", "frag_offset", "numeric"), ("ttl", "ttl", "numeric"),
    ("proto", "proto", "categorical"), ("checksum", "checksum", "numeric"),
]:
    _def(f"ip.{_n}", "IP", _kind, _layer_field("ip", _k))
_def("ip.src", "IP", "string", _layer_field("ip", "src"))
_def("ip.dst", "IP", "string", _layer_field("ip", "dst"))

for _n, _k, _kind in [
    ("srcport", "srcport", "numeric"), ("dstport", "dstport", "numeric"),
    ("hdr_len", "hdr_len", "numeric"), ("len", "payload_len", "numeric"),
    ("seq", "seq", "numeric"), ("ack", "ack", "numeric"),
    ("flags", "flags", "numeric"), ("flags.fin", "flag_fin", "flag"),
    ("flags.syn", "flag_syn", "flag"), ("flags.rst", "flag_rst", "flag"),
    ("flags.psh", "flag_psh", "flag"), ("flags.ack", "flag_ack", "flag"),
    ("flags.urg", "flag_urg", "flag"), ("flags.ece", "flag_ece", "flag"),
    ("flags.cwr", "flag_cwr", "flag"), ("window_size", "window_size", "numeric"),
    ("checksum", "checksum", "numeric"), ("urgent_pointer", "urgent_pointer", "numeric"),
    ("options.len", "options_len", "numeric"), ("options.mss_val", "mss", "numeric"),
    ("options.wscale", "wscale", "numeric"), ("options.sack_perm", "sack_perm", "flag"),
]:
    _def(f"tcp.{_n}", "TCP", _kind, _layer_field("tcp", _k))

for _n, _kind in [("srcport", "numeric"), ("dstport", "numeric"),
                  ("length", "numeric"), ("checksum", "numeric")]:
    _def(f"udp.{_n}", "UDP", _kind, _layer_field("udp", _n))

for _n, _kind in [("type", "categorical"), ("code", "numeric"),
                  ("checksum", "numeric"), ("ident", "numeric"), ("seq", "numeric")]:
    _def(f"icmp.{_n}", "ICMP", _kind, _layer_field("icmp", _n))

for _n, _kind in [("type", "categorical"), ("max_resp", "numeric"), ("checksum", "numeric")]:
    _def(f"igmp.{_n}", "IGMP", _kind, _layer_field("igmp", _n))

for _n, _k, _kind in [
    ("id", "id", "numeric"), ("flags", "flags", "numeric"),
    ("flags.response", "response", "flag"), ("flags.opcode", "opcode", "categorical"),
    ("flags.authoritative", "authoritative", "flag"), ("flags.truncated", "truncated", "flag"),
    ("flags.recdesired", "recdesired", "flag"), ("flags.recavail", "recavail", "flag"),
    ("flags.rcode", "rcode", "categorical"), ("count.queries", "count_queries", "numeric"),
    ("count.answers", "count_answers", "numeric"), ("count.auth_rr", "count_auth_rr", "numeric"),
    ("count.add_rr", "count_add_rr", "numeric"), ("qry.type", "qry_type", "categorical"),
    ("qry.class", "qry_class", "categorical"), ("resp.type", "resp_type", "categorical"),
    ("resp.ttl", "resp_ttl", "numeric"),
]:
    _def(f"dns.{_n}", "DNS", _kind, _layer_field("dns", _k))

for _n, _k, _kind in [
    ("opcode", "opcode", "categorical"), ("hw_type", "hw_type", "categorical"),
    ("hw_len", "hw_len", "numeric"), ("hops", "hops", "numeric"),
    ("secs", "secs", "numeric"), ("flags.bc", "flag_bc", "flag"),
    ("msg_type", "msg_type", "categorical"), ("option_count", "option_count", "numeric"),
]:
    _def(f"dhcp.{_n}", "DHCP", _kind, _layer_field("dhcp", _k))

for _n, _kind in [
    ("flags.li", "categorical"), ("flags.vn", "categorical"), ("flags.mode", "categorical"),
    ("stratum", "numeric"), ("ppoll", "numeric"), ("precision", "numeric"),
    ("rootdelay", "numeric"), ("rootdispersion", "numeric"),
]:
    _def(f"ntp.{_n}", "NTP", _kind, _layer_field("ntp", _n.split(".")[-1]))

for _n, _k, _kind in [
    ("record.content_type", "content_type", "categorical"),
    ("record.version", "version", "categorical"),
    ("record.length", "record_len", "numeric"),
    ("record.count", "record_count", "numeric"),
    ("handshake.type", "handshake_type", "categorical"),
]:
    _def(f"tls.{_n}", "TLS", _kind, _layer_field("tls", _k))

for _n, _k, _kind in [
    ("request", "request", "flag"), ("response", "response", "flag"),
    ("request.method_class", "method_class", "categorical"),
    ("response.code", "response_code", "numeric"),
    ("content_length", "content_length", "numeric"),
]:
    _def(f"http.{_n}", "HTTP", _kind, _layer_field("http", _k))

for _n, _kind in [("type", "categorical"), ("length", "numeric"), ("attr_count", "numeric")]:
    _def(f"stun.{_n}", "STUN", _kind, _layer_field("stun", _n))

for _n, _kind in [("version", "categorical"), ("type", "categorical"), ("len", "numeric")]:
    _def(f"eapol.{_n}", "EAPOL", _kind, _layer_field("eapol", _n))

_def("dstport_class", "DERIVED", "categorical", lambda L: dstport_class(_port_of(L, "dstport")))
_def("srcport_class", "DERIVED", "categorical", lambda L: dstport_class(_port_of(L, "srcport")))


def default_header_schema() -> FeatureSchema:
    """The full shipped header catalog, all descriptors active."""
    return FeatureSchema(
        tuple(FeatureDescriptor(n, p, k) for n, p, k in _CATALOG), family="header"
    )


def extract_features(layers: dict, schema: FeatureSchema) -> list:
    """One value per active descriptor; None marks an absent layer/field."""
    values = []
    for desc in schema.active_descriptors:
        getter = _GETTERS.get(desc.name)
        if getter is None:
            raise KeyError(f"no extractor registered for feature {desc.name!r}")
        values.append(getter(layers))
    return values
