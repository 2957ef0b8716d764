import math
from functools import lru_cache
from pathlib import Path
from typing import Optional, Union

import yaml

from src.models.flow import AttackTaxonomy, MappingConfig, ProtocolMap

PRESETS_DIR = Path(__file__).resolve().parent.parent / "presets"
DEFAULT_MAPPING_PATH = PRESETS_DIR / "mapping_default.yaml"


def round_half_up(x: float) -> int:
    """Round to nearest integer, halves away from zero for x >= 0."""
    # guard against 0.3*10 = 3.0000000000000004 style noise
    return int(math.floor(x + 0.5 + 1e-9))


def canonical_protocol(number: int, protocols: Optional[ProtocolMap] = None) -> str:
    if not isinstance(number, int) or isinstance(number, bool) or not 0 <= number <= 255:
        raise ValueError(f"IP protocol number out of range 0-255: {number!r}")
    protocols = protocols or default_mapping().protocols
    return protocols.lookup(number)


def canonical_label(original: str, taxonomy: Optional[AttackTaxonomy] = None) -> str:
    taxonomy = taxonomy or default_mapping().taxonomy
    return taxonomy.resolve(str(original))


def load_yaml(path: Union[str, Path]) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        data = yaml.safe_load(f)
    return data or {}


def load_mapping(path: Optional[Union[str, Path]] = None) -> MappingConfig:
    """Load a mapping config; dataset files extend the default mapping.

    Aliases and L7 entries in a dataset file are merged over the defaults,
    the schema section replaces the default schema.
    """
    base = load_yaml(DEFAULT_MAPPING_PATH)
    if path is None:
        return MappingConfig.model_validate(base)
    override = load_yaml(path)
    merged = dict(base)
    if "protocols" in override:
        merged["protocols"] = {
            "entries": {**base["protocols"]["entries"], **override["protocols"].get("entries", {})}
        }
    if "taxonomy" in override:
        tax = override["taxonomy"]
        merged["taxonomy"] = {
            "members": tax.get("members", base["taxonomy"]["members"]),
            "aliases": {**base["taxonomy"]["aliases"], **tax.get("aliases", {})},
        }
    if "l7_ports" in override:
        entries = {int(k): dict(v) for k, v in base["l7_ports"]["entries"].items()}
        for transport, ports in override["l7_ports"].get("entries", {}).items():
            entries.setdefault(int(transport), {}).update(ports)
        merged["l7_ports"] = {"entries": entries}
    if "schema" in override:
        merged["schema"] = override["schema"]
    return MappingConfig.model_validate(merged)


@lru_cache(maxsize=1)
def default_mapping() -> MappingConfig:
    return load_mapping()
