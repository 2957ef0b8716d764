import pytest
from pydantic import ValidationError

from conftest import make_flow
from src.core.schema import PRESETS_DIR, canonical_label, canonical_protocol, load_mapping, round_half_up
from src.models.flow import AttackTaxonomy, UnifiedSchema


def test_canonical_protocol_known_and_unknown():
    assert canonical_protocol(6) == "TCP"
    assert canonical_protocol(17) == "UDP"
    assert canonical_protocol(1) == "ICMP"
    assert canonical_protocol(255) == "OTHER"


@pytest.mark.parametrize("bad", [-1, 256, 1000])
def test_canonical_protocol_out_of_range(bad):
    with pytest.raises(ValueError):
        canonical_protocol(bad)


def test_canonical_label_aliases_and_fallback():
    assert canonical_label("DoS attacks-Hulk") == "DoS"
    assert canonical_label("  PortScan ") == "Reconnaissance"
    assert canonical_label("normal") == "Benign"
    assert canonical_label("ddos") == "DDoS"
    assert canonical_label("something new") == "Other"


def test_taxonomy_requires_other():
    with pytest.raises(ValidationError):
        AttackTaxonomy(members=["Benign", "DoS"])


def test_taxonomy_rejects_unknown_alias_target():
    with pytest.raises(ValidationError):
        AttackTaxonomy(aliases={"x": "Nope"})


def test_schema_rejects_unknown_target_field():
    with pytest.raises(ValidationError):
        UnifiedSchema(column_map={"Src": "SRC_IP"})


def test_flow_label_must_agree_with_attack():
    with pytest.raises(ValidationError):
        make_flow(0, attack=1, label="Benign")
    with pytest.raises(ValidationError):
        make_flow(0, attack=0, label="DoS")


def test_flow_rejects_ipv6_and_bad_ports():
    with pytest.raises(ValidationError):
        make_flow(0, src="fe80::1")
    with pytest.raises(ValidationError):
        make_flow(0, L4_DST_PORT=70000)


def test_flow_numeric_value_lookup():
    f = make_flow(3)
    assert f.value("IN_BYTES") == 103
    with pytest.raises(KeyError):
        f.value("Label")


def test_round_half_up():
    assert round_half_up(2.5) == 3
    assert round_half_up(0.3 * 10) == 3
    assert round_half_up(2.4999) == 2
    assert round_half_up(0.0) == 0


def test_dataset_mapping_extends_defaults():
    m = load_mapping(None)
    cic = load_mapping(PRESETS_DIR / "mapping_cicflowmeter.yaml")
    assert cic.schema_.column_map["Src IP"] == "IPV4_SRC_ADDR"
    assert cic.taxonomy.aliases == m.taxonomy.aliases


def test_canonical_label_is_idempotent():
    for raw in ("ddos", "Benign", "zzz_unknown", "SSH-Bruteforce", "scanning"):
        once = canonical_label(raw)
        assert canonical_label(once) == once
    assert canonical_protocol(200) == "OTHER"


@pytest.mark.parametrize("dataset,classes", [
    ("NF-UNSW-NB15", ["Benign", "Exploits", "Fuzzers", "Generic", "Reconnaissance", "DoS",
                      "Analysis", "Backdoor", "Shellcode", "Worms"]),
    ("NF-BoT-IoT", ["Benign", "DDoS", "DoS", "Reconnaissance", "Theft"]),
    ("NF-CSE-CIC-IDS2018", ["Benign", "DDOS attack-HOIC", "DoS attacks-Hulk", "DDoS attacks-LOIC-HTTP",
                            "Bot", "Infilteration", "SSH-Bruteforce", "DoS attacks-GoldenEye",
                            "DoS attacks-Slowloris", "DDOS attack-LOIC-UDP", "Brute Force -Web",
                            "Brute Force -XSS", "SQL Injection", "FTP-BruteForce",
                            "DoS attacks-SlowHTTPTest"]),
    ("NF-ToN-IoT", ["Benign", "scanning", "dos", "injection", "ddos", "password", "xss", "backdoor"]),
])
def test_nf_dataset_classes_resolve(dataset, classes):
    resolved = [canonical_label(c) for c in classes]
    assert "Other" not in resolved, dict(zip(classes, resolved))
    assert resolved[0] == "Benign"
    assert canonical_label("Worms") == "Worms" and canonical_label("Bot") == "Botnet"
