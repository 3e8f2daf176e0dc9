"""Labeled packet ingestion and partition stores.

A partition is an ordered, labeled feature table scoped to one dataset
family and session (e.g. one site's capture day).  Partitions are written
to a directory store (manifest.json + schema.json + features.csv) and are
immutable once built.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .dissect import dissect
from .errors import GemidError, MalformedPacketError, SchemaMismatchError
from .headers import extract_features
from .pcap import RawPacket, read_pcap
from .schema import FeatureSchema, load_schema, save_schema

STORE_VERSION = "1"
META_COLUMNS = ("partition", "session", "source_key", "ts")


@dataclass(frozen=True)
class LabelMap:
    """MAC address -> device label, as read from a labels CSV."""

    entries: tuple[tuple[str, str], ...]

    def __post_init__(self):
        macs = [m for m, _ in self.entries]
        if len(macs) != len(set(macs)):
            raise GemidError("duplicate MAC addresses in label map")
        for mac, device in self.entries:
            if not device:
                raise GemidError(f"empty device label for {mac}")

    @property
    def by_mac(self) -> dict:
        return dict(self.entries)

    @property
    def devices(self) -> set:
        return {d for _, d in self.entries}


def load_labels(path) -> LabelMap:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:2]] != ["mac", "device"]:
            raise GemidError(f"{path}: expected CSV header 'mac,device'")
        entries = tuple((row[0].strip().lower(), row[1].strip()) for row in reader if row)
    return LabelMap(entries)


def save_labels(label_map: LabelMap, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["mac", "device"])
        for mac, device in label_map.entries:
            writer.writerow([mac, device])


def source_key_for(mac: str) -> str:
    """Opaque, stable device-instance id; never a raw MAC string."""
    return "src" + hashlib.sha256(mac.lower().encode()).hexdigest()[:10]


@dataclass
class ExtractionStats:
    packets_read: int = 0
    malformed: int = 0
    unlabeled: int = 0
    labeled: int = 0


def label_packets(packets, label_map: LabelMap, stats: ExtractionStats | None = None):
    """Yield (RawPacket, layers, label) for device-originated packets only.

    A packet is kept iff its source MAC is in the label map; destination is
    irrelevant.  Malformed frames and unmatched sources are counted, not
    raised.
    """
    by_mac = label_map.by_mac
    stats = stats if stats is not None else ExtractionStats()
    for pkt in packets:
        stats.packets_read += 1
        try:
            layers = dissect(pkt)
        except MalformedPacketError:
            stats.malformed += 1
            continue
        label = by_mac.get(layers["eth"]["src"])
        if label is None:
            stats.unlabeled += 1
            continue
        stats.labeled += 1
        yield pkt, layers, label


@dataclass(frozen=True)
class PacketRecord:
    """One row of a feature table plus provenance metadata."""

    partition: str
    session: str
    source_key: str
    ts: float
    values: tuple
    label: str
    seq: int = 0  # row number within (partition, session); stable across store round-trips

    @property
    def uid(self) -> tuple:
        return (self.partition, self.session, self.seq)


@dataclass(frozen=True)
class Partition:
    name: str
    family: str
    session: str
    records: tuple[PacketRecord, ...]
    source_files: tuple[str, ...] = ()
    class_set: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if not self.class_set:
            object.__setattr__(self, "class_set", frozenset(r.label for r in self.records))

    def __len__(self) -> int:
        return len(self.records)


def make_partition(name, family, session, rows, source_files=()) -> Partition:
    """Build a partition from (source_key, ts, values, label) rows in order."""
    records = tuple(
        PacketRecord(name, session, sk, ts, tuple(vals), label, seq=i)
        for i, (sk, ts, vals, label) in enumerate(rows)
    )
    return Partition(name, family, session, records, tuple(str(p) for p in source_files))


def header_rows(pcap_path, label_map: LabelMap, schema: FeatureSchema,
                stats: ExtractionStats | None = None):
    """Extract header-feature rows from one pcap, in capture order."""
    rows = []
    for pkt, layers, label in label_packets(read_pcap(pcap_path), label_map, stats):
        values = extract_features(layers, schema)
        rows.append((source_key_for(layers["eth"]["src"]), pkt.timestamp, values, label))
    return rows


def merge_sessions(partitions, name: str) -> Partition:
    """Concatenate partitions in input order under a new name.

    Per-record provenance (original partition, session, seq) is preserved;
    the class set is the union.  Duplicate input partition names are an
    error.
    """
    names = [p.name for p in partitions]
    if len(names) != len(set(names)):
        raise GemidError(f"duplicate partition names in merge: {names}")
    if not partitions:
        raise GemidError("nothing to merge")
    families = {p.family for p in partitions}
    family = families.pop() if len(families) == 1 else "+".join(sorted(families))
    records = tuple(r for p in partitions for r in p.records)
    sessions = "+".join(p.session for p in partitions)
    files = tuple(f for p in partitions for f in p.source_files)
    return Partition(name, family, sessions, records, files,
                     frozenset().union(*(p.class_set for p in partitions)))


def split_sessions(partition: Partition, n: int) -> list[Partition]:
    """Split a partition into n session partitions by capture order.

    Used when a single capture must supply multiple sessions; records are
    renamed and renumbered per chunk.
    """
    if n <= 1:
        return [partition]
    total = len(partition.records)
    bounds = [round(i * total / n) for i in range(n + 1)]
    out = []
    for i in range(n):
        chunk = partition.records[bounds[i]:bounds[i + 1]]
        name = f"{partition.name}-S{i + 1}"
        session = f"s{i + 1}"
        records = tuple(
            PacketRecord(name, session, r.source_key, r.ts, r.values, r.label, seq=j)
            for j, r in enumerate(chunk)
        )
        out.append(Partition(name, partition.family, session, records,
                             partition.source_files))
    return out


def store_partition(partition: Partition, schema: FeatureSchema, directory) -> Path:
    """Write a partition store; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_schema(schema, directory / "schema.json")

    names = schema.active_names
    per_class = {}
    for r in partition.records:
        per_class[r.label] = per_class.get(r.label, 0) + 1
    manifest = {
        "store_version": STORE_VERSION,
        "name": partition.name,
        "family": partition.family,
        "session": partition.session,
        "schema_family": schema.family,
        "schema_version": schema.version,
        "schema_hash": schema.hash,
        "class_set": sorted(partition.class_set),
        "counts": {"records": len(partition.records), "per_class": dict(sorted(per_class.items()))},
        "source_files": list(partition.source_files),
    }
    manifest_path = directory / "manifest.json"
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")

    from .util import fmt_cell

    with open(directory / "features.csv", "w", newline="") as fh:
        fh.write(f"# family={schema.family} hash={schema.hash} version={schema.version}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(META_COLUMNS) + list(names) + ["label"])
        for r in partition.records:
            row = [r.partition, r.session, r.source_key, fmt_cell(r.ts)]
            row.extend(fmt_cell(v) for v in r.values)
            row.append(r.label)
            writer.writerow(row)
    return manifest_path


def load_partition(directory, expected_schema: FeatureSchema | None = None):
    """Load a partition store; returns (Partition, FeatureSchema).

    Raises FileNotFoundError if the manifest is missing and
    SchemaMismatchError if hashes disagree (edited store, or caller
    expected a different schema).
    """
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json under {directory}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    schema = load_schema(directory / "schema.json")
    if manifest["schema_hash"] != schema.hash:
        raise SchemaMismatchError(
            f"{directory}: manifest hash {manifest['schema_hash']} != schema hash {schema.hash}"
        )
    if expected_schema is not None and expected_schema.hash != schema.hash:
        raise SchemaMismatchError(
            f"{directory}: store schema {schema.hash} != expected {expected_schema.hash}"
        )

    names = schema.active_names
    records = []
    seq_counter: dict[tuple, int] = {}
    with open(directory / "features.csv", newline="") as fh:
        rows = (line for line in fh if not line.startswith("#"))
        reader = csv.reader(rows)
        header = next(reader)
        expected_header = list(META_COLUMNS) + list(names) + ["label"]
        if header != expected_header:
            raise SchemaMismatchError(f"{directory}: features.csv header does not match schema")
        for row in reader:
            part, session, source_key, ts = row[:4]
            values = tuple(None if cell == "" else float(cell) for cell in row[4:-1])
            label = row[-1]
            key = (part, session)
            seq = seq_counter.get(key, 0)
            seq_counter[key] = seq + 1
            records.append(PacketRecord(part, session, source_key, float(ts), values, label, seq))
    partition = Partition(
        manifest["name"], manifest["family"], manifest["session"], tuple(records),
        tuple(manifest.get("source_files", ())), frozenset(manifest["class_set"]),
    )
    return partition, schema


def project_records(records, old_schema: FeatureSchema, new_schema: FeatureSchema):
    """Re-align record values from one schema's active list to another's."""
    old_names = list(old_schema.active_names)
    idx = [old_names.index(n) for n in new_schema.active_names]
    return [
        PacketRecord(r.partition, r.session, r.source_key, r.ts,
                     tuple(r.values[i] for i in idx), r.label, r.seq)
        for r in records
    ]
