import json

import pytest

from gemid.errors import GemidError, SchemaMismatchError
from gemid.ingest import (LabelMap, header_rows, label_packets, load_labels,
                          load_partition, make_partition, merge_sessions,
                          save_labels, split_sessions, store_partition)
from gemid.headers import default_header_schema
from gemid.pcap import read_pcap
from gemid.schema import (FeatureDescriptor, FeatureSchema, apply_filters,
                          rule_filter)

from conftest import eth_header, ipv4_header, make_partition as mk, tcp_header, write_pcap_file


def frame_from(src_mac):
    return eth_header(src=src_mac) + ipv4_header(total_len=40) + tcp_header()


LABELS = LabelMap((("02:00:00:00:00:01", "cam"), ("02:00:00:00:00:02", "hub")))


def test_label_by_source_mac_only(tmp_path):
    frames = [
        (0, 0, frame_from("02:00:00:00:00:01")),
        (0, 100, frame_from("02:00:00:00:00:02")),
        (0, 200, frame_from("02:00:00:00:00:aa")),  # unknown source
    ]
    path = write_pcap_file(tmp_path / "t.pcap", frames)
    from gemid.ingest import ExtractionStats

    stats = ExtractionStats()
    out = list(label_packets(read_pcap(path), LABELS, stats))
    assert [label for _, _, label in out] == ["cam", "hub"]
    assert stats.unlabeled == 1 and stats.labeled == 2


def test_empty_label_map_rejected():
    with pytest.raises(Exception):
        LabelMap((("02:00:00:00:00:01", ""),))
    lm = LabelMap(())
    assert lm.devices == set()


def test_broadcast_destination_kept(tmp_path):
    frame = eth_header(src="02:00:00:00:00:01", dst="ff:ff:ff:ff:ff:ff") + \
        ipv4_header(total_len=40) + tcp_header()
    path = write_pcap_file(tmp_path / "t.pcap", [(0, 0, frame)])
    out = list(label_packets(read_pcap(path), LABELS))
    assert len(out) == 1 and out[0][2] == "cam"


def test_duplicate_macs_rejected():
    with pytest.raises(GemidError):
        LabelMap((("02:00:00:00:00:01", "cam"), ("02:00:00:00:00:01", "hub")))


def test_labels_csv_roundtrip(tmp_path):
    path = tmp_path / "labels.csv"
    save_labels(LABELS, path)
    assert load_labels(path) == LABELS


def test_merge_sessions_concatenates_and_unions():
    a = mk("P1", "A", "s1", [(1.0,), (2.0,)], ["cam", "cam"])
    b = mk("P2", "A", "s2", [(3.0,)], ["hub"])
    merged = merge_sessions([a, b], "P12")
    assert merged.name == "P12"
    assert len(merged) == 3
    assert merged.class_set == {"cam", "hub"}
    # provenance: original partition names survive per record
    assert [r.partition for r in merged.records] == ["P1", "P1", "P2"]


def test_merge_single_partition_is_identity_under_new_name():
    a = mk("P1", "A", "s1", [(1.0,)], ["cam"])
    merged = merge_sessions([a], "Q")
    assert merged.records == a.records
    assert merged.class_set == a.class_set


def test_merge_duplicate_names_error():
    a = mk("P1", "A", "s1", [(1.0,)], ["cam"])
    with pytest.raises(GemidError):
        merge_sessions([a, a], "X")


def test_merge_associative_on_record_multisets():
    a = mk("P1", "A", "s1", [(1.0,)], ["cam"])
    b = mk("P2", "A", "s2", [(2.0,)], ["hub"])
    c = mk("P3", "B", "s1", [(3.0,)], ["plug"])
    left = merge_sessions([merge_sessions([a, b], "ab"), c], "abc")
    right = merge_sessions([a, merge_sessions([b, c], "bc")], "abc")
    assert sorted(left.records, key=lambda r: r.ts) == sorted(right.records, key=lambda r: r.ts)


SCHEMA = FeatureSchema((
    FeatureDescriptor("f.a", "IP", "numeric"),
    FeatureDescriptor("f.b", "IP", "numeric"),
))


def test_store_load_roundtrip_bit_exact(tmp_path):
    part = mk("P1", "A", "s1", [(1.5, None), (2.25, 3.0)], ["cam", "hub"])
    store_partition(part, SCHEMA, tmp_path / "store")
    loaded, schema = load_partition(tmp_path / "store")
    assert loaded.records == part.records
    assert loaded.class_set == part.class_set
    assert schema.hash == SCHEMA.hash
    first = (tmp_path / "store" / "features.csv").read_bytes()
    store_partition(loaded, schema, tmp_path / "store2")
    assert (tmp_path / "store2" / "features.csv").read_bytes() == first


def test_load_with_edited_hash_errors(tmp_path):
    part = mk("P1", "A", "s1", [(1.0, 2.0)], ["cam"])
    store_partition(part, SCHEMA, tmp_path / "store")
    manifest_path = tmp_path / "store" / "manifest.json"
    doc = json.loads(manifest_path.read_text())
    doc["schema_hash"] = "0" * 16
    manifest_path.write_text(json.dumps(doc))
    with pytest.raises(SchemaMismatchError):
        load_partition(tmp_path / "store")


def test_load_missing_manifest(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_partition(tmp_path / "nope")


def test_load_with_expected_schema_mismatch(tmp_path):
    part = mk("P1", "A", "s1", [(1.0, 2.0)], ["cam"])
    store_partition(part, SCHEMA, tmp_path / "store")
    other = FeatureSchema((FeatureDescriptor("x", "IP", "numeric"),))
    with pytest.raises(SchemaMismatchError):
        load_partition(tmp_path / "store", expected_schema=other)


def test_split_sessions_renumbers():
    part = mk("P", "A", "s1", [(float(i),) for i in range(10)], ["cam"] * 10)
    halves = split_sessions(part, 2)
    assert [p.name for p in halves] == ["P-S1", "P-S2"]
    assert [len(p) for p in halves] == [5, 5]
    assert [r.seq for r in halves[1].records] == list(range(5))
    assert halves[0].session == "s1" and halves[1].session == "s2"


def test_header_rows_deterministic(tmp_path):
    frames = [(0, i * 100, frame_from("02:00:00:00:00:01")) for i in range(5)]
    path = write_pcap_file(tmp_path / "t.pcap", frames)
    schema = rule_filter(default_header_schema())
    rows1 = header_rows(path, LABELS, schema)
    rows2 = header_rows(path, LABELS, schema)
    assert rows1 == rows2
    assert len(rows1) == 5


def test_apply_filters_reasons():
    schema = FeatureSchema((
        FeatureDescriptor("ip.src", "IP", "string"),
        FeatureDescriptor("ip.ttl", "IP", "numeric"),
        FeatureDescriptor("const", "IP", "numeric"),
        FeatureDescriptor("name", "IP", "string"),
    ))
    sample = [
        mk("P", "A", "s1", [("10.0.0.1", 64.0, 0.0, "x")], ["cam"]).records[0],
        mk("P", "A", "s1", [("10.0.0.2", 128.0, 0.0, "y")], ["cam"]).records[0],
    ]
    filtered = apply_filters(schema, sample)
    by_name = {d.name: d for d in filtered.descriptors}
    assert by_name["ip.src"].filter_reason == "contains-ip"
    assert by_name["ip.ttl"].active
    assert by_name["const"].filter_reason == "constant"
    assert by_name["name"].filter_reason == "string-valued"


def test_apply_filters_all_filtered_errors():
    schema = FeatureSchema((FeatureDescriptor("c", "IP", "numeric"),))
    sample = mk("P", "A", "s1", [(0.0,), (0.0,)], ["cam", "cam"]).records
    from gemid.errors import EmptySchemaError

    with pytest.raises(EmptySchemaError):
        apply_filters(schema, list(sample))


def test_schema_hash_tracks_active_set():
    base = FeatureSchema((
        FeatureDescriptor("a", "IP", "numeric"),
        FeatureDescriptor("b", "IP", "numeric"),
    ))
    dropped = base.subset(["a"])
    assert base.hash != dropped.hash
    again = FeatureSchema((
        FeatureDescriptor("a", "IP", "numeric"),
        FeatureDescriptor("b", "IP", "numeric", "filtered:constant"),
    ))
    assert again.hash == dropped.hash
