import json

import pytest

from gemid.dissect import dissect
from gemid.errors import GemidError
from gemid.ingest import load_labels
from gemid.pcap import read_pcap
from gemid.synth import (audit_environment_independence, default_devices,
                         default_environments, generate, plant_confounder)


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("synthdata")
    envs = default_environments()
    devices = plant_confounder(default_devices(4), envs, 0.7, 7)
    result = generate(devices, envs, 150, 7, out)
    return devices, envs, result


def test_counts_and_validity(small_dataset):
    devices, envs, result = small_dataset
    labels = load_labels(result.labels_path)
    by_mac = labels.by_mac
    for env in envs:
        per_device = {}
        for pkt in read_pcap(result.pcap_paths[env.name]):
            layers = dissect(pkt)  # must never raise: generated frames are valid
            label = by_mac.get(layers["eth"]["src"])
            if label:
                per_device[label] = per_device.get(label, 0) + 1
        assert set(per_device) == {d.name for d in devices}
        assert all(v >= 150 for v in per_device.values())


def test_determinism_byte_identical(tmp_path):
    envs = default_environments()
    devices = plant_confounder(default_devices(4), envs, 0.5, 99)
    a = generate(devices, envs, 60, 99, tmp_path / "a")
    b = generate(devices, envs, 60, 99, tmp_path / "b")
    for env in envs:
        assert (a.pcap_paths[env.name].read_bytes()
                == b.pcap_paths[env.name].read_bytes())
    assert a.ground_truth_path.read_text() == b.ground_truth_path.read_text()


def test_extractor_recovers_planted_ttl(small_dataset):
    devices, envs, result = small_dataset
    labels = load_labels(result.labels_path).by_mac
    planted = {d.name: d.ttl for d in devices}
    for env in envs:
        seen = {}
        for pkt in read_pcap(result.pcap_paths[env.name]):
            layers = dissect(pkt)
            label = labels.get(layers["eth"]["src"])
            if label and "ip" in layers:
                seen.setdefault(label, set()).add(layers["ip"]["ttl"])
        assert {k: v.pop() for k, v in seen.items() if len(v) == 1} == planted


def test_environment_independence_audit(small_dataset):
    devices, envs, _ = small_dataset
    audit = audit_environment_independence(devices, envs)
    for device, views in audit.items():
        signatures = list(views.values())
        assert all(sig == signatures[0] for sig in signatures)


def test_strength_zero_plants_nothing():
    envs = default_environments()
    devices = plant_confounder(default_devices(4), envs, 0.0, 1)
    assert all(not d.srcport_env and not d.dscp_env for d in devices)


def test_confounder_codes_are_deranged():
    envs = default_environments()
    devices = plant_confounder(default_devices(6), envs, 1.0, 1)
    for d in devices:
        assert d.srcport_env[envs[0].name] != d.srcport_env[envs[1].name]
        assert d.dscp_env[envs[0].name] != d.dscp_env[envs[1].name]


def test_mac_collision_rejected(tmp_path):
    envs = default_environments()
    devices = default_devices(4)
    from dataclasses import replace

    clashed = [devices[0], replace(devices[1], mac=devices[0].mac)] + list(devices[2:])
    with pytest.raises(GemidError):
        generate(clashed, envs, 10, 0, tmp_path)


def test_ground_truth_contents(small_dataset):
    _, _, result = small_dataset
    doc = json.loads(result.ground_truth_path.read_text())
    assert doc["confounder_strength"] == 0.7
    assert "ip.ttl" in doc["invariant_features"]
    assert "tcp.srcport" in doc["confounded_features"]
    assert len(doc["signatures"]) == 4
