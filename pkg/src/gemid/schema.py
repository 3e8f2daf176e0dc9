"""Feature schemas: descriptor catalogs, filtering, and serialization.

A schema is an ordered list of descriptors.  Only "active" descriptors
appear in feature tables; descriptors can be filtered with a recorded
reason (string-valued, contains-mac, contains-ip, constant).  The active
name+kind list is hashed so stores and models can refuse mismatched data.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, replace
from importlib import resources

from .errors import EmptySchemaError

SCHEMA_VERSION = "1.0.0"

KINDS = ("numeric", "categorical", "flag", "string")
FILTER_REASONS = ("string-valued", "contains-mac", "contains-ip", "constant")

_MAC_RE = re.compile(r"^([0-9a-fA-F]{2}:){5}[0-9a-fA-F]{2}$")
_IPV4_RE = re.compile(r"^(\d{1,3}\.){3}\d{1,3}$")

# descriptor names that carry hardware or network addresses by construction
_ADDRESS_FIELDS = {
    "eth.src": "contains-mac",
    "eth.dst": "contains-mac",
    "ip.src": "contains-ip",
    "ip.dst": "contains-ip",
}


@dataclass(frozen=True)
class FeatureDescriptor:
    name: str
    protocol: str
    kind: str
    status: str = "active"  # "active" or "filtered:<reason>"

    @property
    def active(self) -> bool:
        return self.status == "active"

    @property
    def filter_reason(self) -> str | None:
        if self.status.startswith("filtered:"):
            return self.status.split(":", 1)[1]
        return None


@dataclass(frozen=True)
class FeatureSchema:
    descriptors: tuple[FeatureDescriptor, ...]
    version: str = SCHEMA_VERSION
    family: str = "header"

    def __post_init__(self):
        names = [d.name for d in self.descriptors]
        if len(names) != len(set(names)):
            raise ValueError("duplicate descriptor names in schema")

    @property
    def active_descriptors(self) -> tuple[FeatureDescriptor, ...]:
        return tuple(d for d in self.descriptors if d.active)

    @property
    def active_names(self) -> tuple[str, ...]:
        return tuple(d.name for d in self.descriptors if d.active)

    @property
    def hash(self) -> str:
        digest = hashlib.sha256()
        for d in self.active_descriptors:
            digest.update(f"{d.name}:{d.kind}\n".encode())
        return digest.hexdigest()[:16]

    def subset(self, names) -> "FeatureSchema":
        """Schema restricted to the given active feature names (order kept)."""
        wanted = set(names)
        missing = wanted - set(self.active_names)
        if missing:
            raise KeyError(f"unknown or inactive features: {sorted(missing)}")
        kept = tuple(d for d in self.descriptors if d.name in wanted and d.active)
        return FeatureSchema(kept, version=self.version, family=self.family)


def load_schema(path_or_family) -> FeatureSchema:
    """Load a schema from a JSON file path, or one of the shipped catalogs
    by family name ("header", "flow", "window")."""
    name = str(path_or_family)
    if name in ("header", "flow", "window"):
        text = resources.files("gemid.schemas").joinpath(f"{name}_schema.json").read_text()
    else:
        with open(name) as fh:
            text = fh.read()
    doc = json.loads(text)
    descs = tuple(
        FeatureDescriptor(d["name"], d["protocol"], d["kind"], d.get("status", "active"))
        for d in doc["descriptors"]
    )
    return FeatureSchema(descs, version=doc.get("version", SCHEMA_VERSION),
                         family=doc.get("family", "header"))


def save_schema(schema: FeatureSchema, path) -> None:
    doc = {
        "family": schema.family,
        "version": schema.version,
        "hash": schema.hash,
        "descriptors": [
            {"name": d.name, "protocol": d.protocol, "kind": d.kind, "status": d.status}
            for d in schema.descriptors
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=False)
        fh.write("\n")


def rule_filter(schema: FeatureSchema) -> FeatureSchema:
    """Data-free pass: filter address-bearing and string-kind descriptors.

    Run before extraction so address strings never enter a feature table;
    the data-driven constant filter runs afterwards via apply_filters.
    """
    out = []
    for desc in schema.descriptors:
        if not desc.active:
            out.append(desc)
        elif desc.name in _ADDRESS_FIELDS:
            out.append(replace(desc, status=f"filtered:{_ADDRESS_FIELDS[desc.name]}"))
        elif desc.kind == "string":
            out.append(replace(desc, status="filtered:string-valued"))
        else:
            out.append(desc)
    filtered = FeatureSchema(tuple(out), version=schema.version, family=schema.family)
    if not filtered.active_descriptors:
        raise EmptySchemaError("all descriptors were filtered out")
    return filtered


def apply_filters(schema: FeatureSchema, sample) -> FeatureSchema:
    """Filter descriptors that are string-valued, carry addresses, or are
    constant over the sample records.

    `sample` is a non-empty sequence of records whose `.values` align with
    the schema's currently-active descriptors.  Missing counts as its own
    value state, so a field that is sometimes absent is not constant.
    """
    if not sample:
        raise ValueError("cannot filter against an empty sample")
    active = schema.active_descriptors
    columns = list(zip(*(rec.values for rec in sample))) if sample else []

    out = []
    col = 0
    for desc in schema.descriptors:
        if not desc.active:
            out.append(desc)
            continue
        reason = _rule_reason(desc, columns[col] if columns else ())
        if reason is None and _is_constant(columns[col]):
            reason = "constant"
        out.append(desc if reason is None else replace(desc, status=f"filtered:{reason}"))
        col += 1
    assert col == len(active)

    filtered_schema = FeatureSchema(tuple(out), version=schema.version, family=schema.family)
    if not filtered_schema.active_descriptors:
        raise EmptySchemaError("all descriptors were filtered out")
    return filtered_schema


def _rule_reason(desc: FeatureDescriptor, column) -> str | None:
    if desc.name in _ADDRESS_FIELDS:
        return _ADDRESS_FIELDS[desc.name]
    if desc.kind == "string":
        return "string-valued"
    for v in column:
        if isinstance(v, str):
            if _MAC_RE.match(v):
                return "contains-mac"
            if _IPV4_RE.match(v):
                return "contains-ip"
            return "string-valued"
    return None


def _is_constant(column) -> bool:
    # records carry None (never NaN) for missing at this stage
    first = column[0] if column else None
    for v in column:
        if v != first:
            return False
    return True
