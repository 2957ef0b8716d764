from ipaddress import IPv4Address
from typing import Dict, List, Optional, Tuple
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

BENIGN = "Benign"
OTHER = "Other"
UNKNOWN_PROTOCOL = "OTHER"

# Column order of the unified CSV
UNIFIED_COLUMNS: Tuple[str, ...] = (
    "IPV4_SRC_ADDR",
    "L4_SRC_PORT",
    "IPV4_DST_ADDR",
    "L4_DST_PORT",
    "PROTOCOL",
    "L7_PROTO",
    "IN_BYTES",
    "OUT_BYTES",
    "IN_PKTS",
    "OUT_PKTS",
    "TCP_FLAGS",
    "FLOW_DURATION_MILLISECONDS",
    "flow_id",
    "dataset_source",
    "Attack",
    "Label",
)

# Optional column carried by generated datasets
FLOW_START_COLUMN = "FLOW_START_MILLISECONDS"

NUMERIC_FEATURES: Tuple[str, ...] = (
    "L4_SRC_PORT",
    "L4_DST_PORT",
    "PROTOCOL",
    "L7_PROTO",
    "IN_BYTES",
    "OUT_BYTES",
    "IN_PKTS",
    "OUT_PKTS",
    "TCP_FLAGS",
    "FLOW_DURATION_MILLISECONDS",
)

# Raw features shown to the analyst (and kept per edge in the graph)
KEY_RAW_FEATURES: Tuple[str, ...] = (
    "IN_BYTES",
    "OUT_BYTES",
    "IN_PKTS",
    "OUT_PKTS",
    "FLOW_DURATION_MILLISECONDS",
    "PROTOCOL",
    "L7_PROTO",
    "TCP_FLAGS",
)

DEFAULT_TAXONOMY_MEMBERS: Tuple[str, ...] = (
    "Benign", "DoS", "DDoS", "Reconnaissance", "BruteForce", "Injection",
    "Infiltration", "Backdoor", "Exploits", "Fuzzers", "Theft", "Other",
)


class FlowRecord(BaseModel):
    """One standardized bidirectional NetFlow entry."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    src_addr: IPv4Address = Field(alias="IPV4_SRC_ADDR")
    src_port: int = Field(alias="L4_SRC_PORT", ge=0, le=65535)
    dst_addr: IPv4Address = Field(alias="IPV4_DST_ADDR")
    dst_port: int = Field(alias="L4_DST_PORT", ge=0, le=65535)
    protocol: int = Field(alias="PROTOCOL", ge=0, le=255)
    l7_proto: int = Field(default=0, alias="L7_PROTO", ge=0)
    in_bytes: int = Field(alias="IN_BYTES", ge=0)
    out_bytes: int = Field(alias="OUT_BYTES", ge=0)
    in_pkts: int = Field(alias="IN_PKTS", ge=0)
    out_pkts: int = Field(alias="OUT_PKTS", ge=0)
    tcp_flags: int = Field(default=0, alias="TCP_FLAGS", ge=0, le=255)
    flow_duration_ms: int = Field(alias="FLOW_DURATION_MILLISECONDS", ge=0)
    flow_id: str = Field(min_length=1)
    dataset_source: str = Field(min_length=1)
    attack: int = Field(alias="Attack", ge=0, le=1)
    label: str = Field(alias="Label", min_length=1)
    flow_start_ms: Optional[int] = Field(default=None, alias=FLOW_START_COLUMN, ge=0)

    @field_validator("src_addr", "dst_addr", mode="before")
    @classmethod
    def _reject_ipv6(cls, v):
        if isinstance(v, str) and ":" in v:
            raise ValueError(f"IPv6 address not supported: {v}")
        return v

    @model_validator(mode="after")
    def _label_matches_attack(self):
        if (self.attack == 0) != (self.label == BENIGN):
            raise ValueError(
                f"Attack={self.attack} inconsistent with Label={self.label!r}"
            )
        return self

    def value(self, column: str) -> int:
        """Numeric value of a unified column."""
        field = _COLUMN_TO_FIELD.get(column)
        if field is None or column not in NUMERIC_FEATURES:
            raise KeyError(f"Not a numeric unified column: {column}")
        return getattr(self, field)

    def to_row(self) -> Dict[str, object]:
        row = self.model_dump(by_alias=True, mode="json")
        if row.get(FLOW_START_COLUMN) is None:
            row.pop(FLOW_START_COLUMN, None)
        return row


_COLUMN_TO_FIELD: Dict[str, str] = {
    (info.alias or name): name for name, info in FlowRecord.model_fields.items()
}


class ProtocolMap(BaseModel):
    model_config = ConfigDict(frozen=True)

    entries: Dict[int, str] = Field(default_factory=lambda: {
        1: "ICMP", 2: "IGMP", 6: "TCP", 17: "UDP", 47: "GRE",
        50: "ESP", 51: "AH", 58: "ICMPV6", 132: "SCTP",
    })

    @model_validator(mode="after")
    def _has_core_protocols(self):
        for number, name in ((1, "ICMP"), (6, "TCP"), (17, "UDP")):
            if self.entries.get(number) != name:
                raise ValueError(f"Protocol map must map {number} to {name}")
        return self

    def lookup(self, number: int) -> str:
        return self.entries.get(number, UNKNOWN_PROTOCOL)


class AttackTaxonomy(BaseModel):
    model_config = ConfigDict(frozen=True)

    members: List[str] = Field(default_factory=lambda: list(DEFAULT_TAXONOMY_MEMBERS))
    aliases: Dict[str, str] = Field(default_factory=dict)

    @field_validator("aliases", mode="after")
    @classmethod
    def _fold_keys(cls, v: Dict[str, str]) -> Dict[str, str]:
        return {k.strip().casefold(): target for k, target in v.items()}

    @model_validator(mode="after")
    def _check_members(self):
        if OTHER not in self.members:
            raise ValueError("Taxonomy must contain 'Other'")
        if BENIGN not in self.members:
            raise ValueError("Taxonomy must contain 'Benign'")
        if len(set(self.members)) != len(self.members):
            raise ValueError("Taxonomy members must be unique")
        bad = sorted({t for t in self.aliases.values() if t not in self.members})
        if bad:
            raise ValueError(f"Alias targets not in taxonomy: {bad}")
        return self

    def resolve(self, original: str) -> str:
        key = original.strip().casefold()
        if key in self.aliases:
            return self.aliases[key]
        # members are implicit aliases of themselves
        for member in self.members:
            if member.casefold() == key:
                return member
        return OTHER


class UnifiedSchema(BaseModel):
    """Raw column names of one source dataset mapped onto unified column names."""

    model_config = ConfigDict(frozen=True)

    column_map: Dict[str, str] = Field(default_factory=dict)
    required: List[str] = Field(default_factory=lambda: [
        "IPV4_SRC_ADDR", "L4_SRC_PORT", "IPV4_DST_ADDR", "L4_DST_PORT",
        "PROTOCOL", "IN_BYTES", "OUT_BYTES", "IN_PKTS", "OUT_PKTS",
        "FLOW_DURATION_MILLISECONDS", "Label",
    ])
    unit_scale: Dict[str, float] = Field(default_factory=dict)
    # fields keeping only the integer part, e.g. nDPI "master.app" ids such as 7.178
    truncate: List[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def _targets_known(self):
        known = set(UNIFIED_COLUMNS) | {FLOW_START_COLUMN}
        bad = sorted({t for t in self.column_map.values() if t not in known})
        bad += sorted(r for r in self.required if r not in known)
        bad += sorted(u for u in self.unit_scale if u not in known)
        bad += sorted(t for t in self.truncate if t not in known)
        if bad:
            raise ValueError(f"Unknown unified fields: {bad}")
        return self

    def unified_to_raw(self) -> Dict[str, str]:
        """Unified field -> raw column; identity for already-unified columns."""
        return {unified: raw for raw, unified in self.column_map.items()}


class L7PortMap(BaseModel):
    model_config = ConfigDict(frozen=True)

    # transport protocol number -> {port -> nDPI protocol id}
    entries: Dict[int, Dict[int, int]] = Field(default_factory=dict)

    def lookup(self, port: int, transport: int) -> int:
        return self.entries.get(transport, {}).get(port, 0)


class ScalerStats(BaseModel):
    model_config = ConfigDict(frozen=True)

    feature_names: List[str]
    mean: List[float]
    stdev: List[float]

    @model_validator(mode="after")
    def _shapes(self):
        if not (len(self.feature_names) == len(self.mean) == len(self.stdev)):
            raise ValueError("ScalerStats vectors must match feature_names")
        if any(not s > 0 for s in self.stdev):
            raise ValueError("ScalerStats stdev entries must be > 0")
        return self


class SplitSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    train_fraction: float = Field(default=0.70, gt=0, le=1)
    validation_fraction: float = Field(default=0.0, ge=0, lt=1)
    stratify_on: str = "label"
    seed: int = 0

    @model_validator(mode="after")
    def _fractions(self):
        if self.train_fraction + self.validation_fraction > 1:
            raise ValueError("train_fraction + validation_fraction must be <= 1")
        if self.stratify_on not in ("label", "attack", "dataset_source"):
            raise ValueError(f"Cannot stratify on {self.stratify_on!r}")
        return self


class MappingConfig(BaseModel):
    """Everything needed to standardize one dataset."""

    protocols: ProtocolMap = Field(default_factory=ProtocolMap)
    taxonomy: AttackTaxonomy = Field(default_factory=AttackTaxonomy)
    l7_ports: L7PortMap = Field(default_factory=L7PortMap)
    schema_: UnifiedSchema = Field(default_factory=UnifiedSchema, alias="schema")

    model_config = ConfigDict(populate_by_name=True)
