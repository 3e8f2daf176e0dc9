"""Classic pcap reading and writing (Ethernet link type only).

pcapng is deliberately unsupported; the datasets this pipeline targets ship
classic pcap, and keeping the parser to one format keeps it small and easy
to audit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

from .errors import PartialReadError, UnsupportedFormatError

MAGIC_NATIVE = 0xA1B2C3D4
MAGIC_SWAPPED = 0xD4C3B2A1
LINKTYPE_ETHERNET = 1

_GLOBAL_HEADER = struct.Struct("<IHHiIII")
_RECORD_HEADER = struct.Struct("<IIII")


@dataclass(frozen=True)
class RawPacket:
    """One captured frame: epoch timestamp (microsecond precision) + link bytes."""

    timestamp: float
    link_bytes: bytes
    caplen: int
    origlen: int


def read_pcap(path) -> Iterator[RawPacket]:
    """Yield packets from a classic pcap file in capture order.

    Raises UnsupportedFormatError for a bad magic or non-Ethernet link type,
    and PartialReadError (carrying the count already yielded) if the file
    ends mid-record.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(_GLOBAL_HEADER.size)
        if len(head) < _GLOBAL_HEADER.size:
            raise UnsupportedFormatError(f"{path}: too short for a pcap global header")
        magic = struct.unpack("<I", head[:4])[0]
        if magic == MAGIC_NATIVE:
            endian = "<"
        elif magic == MAGIC_SWAPPED:
            endian = ">"
        else:
            raise UnsupportedFormatError(f"{path}: unrecognized pcap magic 0x{magic:08x}")
        _, _, _, _, _, _, network = struct.unpack(endian + "IHHiIII", head)
        if network != LINKTYPE_ETHERNET:
            raise UnsupportedFormatError(
                f"{path}: link type {network} not supported (Ethernet only)"
            )

        rec = struct.Struct(endian + "IIII")
        count = 0
        while True:
            rh = fh.read(rec.size)
            if not rh:
                return
            if len(rh) < rec.size:
                raise PartialReadError(
                    f"{path}: truncated record header after {count} packets", count
                )
            ts_sec, ts_usec, caplen, origlen = rec.unpack(rh)
            data = fh.read(caplen)
            if len(data) < caplen:
                raise PartialReadError(
                    f"{path}: truncated record body after {count} packets", count
                )
            yield RawPacket(ts_sec + ts_usec * 1e-6, data, caplen, origlen)
            count += 1


class PcapWriter:
    """Minimal classic pcap writer used by the synthetic dataset generator."""

    def __init__(self, path, snaplen: int = 65535):
        self._fh = open(path, "wb")
        self._fh.write(
            _GLOBAL_HEADER.pack(MAGIC_NATIVE, 2, 4, 0, 0, snaplen, LINKTYPE_ETHERNET)
        )

    def write(self, timestamp: float, frame: bytes) -> None:
        ts_sec = int(timestamp)
        ts_usec = int(round((timestamp - ts_sec) * 1e6))
        if ts_usec >= 1_000_000:
            ts_sec += 1
            ts_usec -= 1_000_000
        self._fh.write(_RECORD_HEADER.pack(ts_sec, ts_usec, len(frame), len(frame)))
        self._fh.write(frame)

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
