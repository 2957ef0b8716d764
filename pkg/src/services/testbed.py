"""Flow-level lab traffic generator with timestamp/port ground-truth labeling."""
from ipaddress import IPv4Address
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.core.errors import PhaseError
from src.core.schema import PRESETS_DIR, default_mapping, load_yaml, round_half_up
from src.models.flow import BENIGN, FlowRecord
from src.models.testbed import GroundTruthRule, LabConfig, PhaseKind, PhaseSpec, SessionSpec
from src.services.standardizer import engineer_l7
from src.utils.logger import logger

SESSIONS_PATH = PRESETS_DIR / "testbed_sessions.yaml"

TCP, UDP, ICMP = 6, 17, 1
SYN, RST, PSH, ACK, FIN = 0x02, 0x04, 0x08, 0x10, 0x01

# (t_ms, generator order, seq) -> sortable flow before ids are assigned
_Stamped = Tuple[int, int, int, FlowRecord]


def _check_phases(phases: Sequence[PhaseSpec]) -> List[PhaseSpec]:
    if not phases:
        raise PhaseError("A session needs at least one phase")
    ordered = sorted(phases, key=lambda p: p.start_s)
    for prev, nxt in zip(ordered, ordered[1:]):
        if nxt.start_s < prev.end_s:
            raise PhaseError(f"Phases {prev.name} and {nxt.name} overlap")
    return ordered


def _window_ms(phase: PhaseSpec, start_ms: int) -> Tuple[int, int]:
    return start_ms + round_half_up(phase.start_s * 1000), start_ms + round_half_up(phase.end_s * 1000)


def _times(rng: np.random.Generator, lo: int, hi: int, n: int) -> np.ndarray:
    """n evenly spread jittered timestamps in [lo, hi)."""
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    u = rng.uniform(0.0, 1.0, size=n)
    offsets = np.floor((hi - lo) * (np.arange(n) + u) / n).astype(np.int64)
    return lo + np.minimum(offsets, hi - lo - 1)


def _spoofed_ip(rng: np.random.Generator) -> str:
    while True:
        ip = IPv4Address(int(rng.integers(0x01000000, 0xDF000000)))
        if ip.is_global:
            return str(ip)


def _flow(src: str, sport: int, dst: str, dport: int, proto: int, in_pkts: int, out_pkts: int,
          in_bytes: int, out_bytes: int, flags: int, duration: int, t_ms: int) -> FlowRecord:
    return FlowRecord(
        IPV4_SRC_ADDR=src, L4_SRC_PORT=sport, IPV4_DST_ADDR=dst, L4_DST_PORT=dport,
        PROTOCOL=proto,
        L7_PROTO=engineer_l7(sport, dport, proto, default_mapping().l7_ports),
        IN_BYTES=in_bytes, OUT_BYTES=out_bytes, IN_PKTS=in_pkts, OUT_PKTS=out_pkts,
        TCP_FLAGS=flags if proto == TCP else 0,
        FLOW_DURATION_MILLISECONDS=duration,
        flow_id="pending", dataset_source="pending", Attack=0, Label=BENIGN,
        FLOW_START_MILLISECONDS=t_ms,
    )


def _benign(lab: LabConfig, rng: np.random.Generator, times: np.ndarray) -> Iterator[FlowRecord]:
    """MQTT publishes to the broker and HTTP requests to the web server, log-normal volumes."""
    lo, hi = lab.ephemeral_ports
    for t in times:
        sport = int(rng.integers(lo, hi + 1))
        if rng.uniform() < lab.mqtt_share:
            clients = [d for d in lab.devices if d != lab.broker]
            src, dst, dport = clients[rng.integers(len(clients))], lab.broker, lab.mqtt_port
            pkts = max(1, int(round(rng.lognormal(1.5, 0.5))))
            in_bytes = pkts * int(rng.integers(80, 400))
            out_pkts, out_bytes = pkts, pkts * 66
        else:
            clients = [d for d in lab.devices if d != lab.http_server]
            src, dst, dport = clients[rng.integers(len(clients))], lab.http_server, lab.http_port
            pkts = max(3, int(round(rng.lognormal(2.0, 0.6))))
            in_bytes = pkts * int(rng.integers(60, 200))
            out_pkts = max(3, int(round(pkts * rng.uniform(1.0, 3.0))))
            out_bytes = out_pkts * int(rng.integers(400, 1460))
        duration = int(round(rng.lognormal(5.0, 1.0)))
        yield _flow(src, sport, dst, dport, TCP, pkts, out_pkts, in_bytes, out_bytes,
                    SYN | ACK | PSH | FIN, duration, int(t))


def _keepalives(lab: LabConfig, rng: np.random.Generator, lo_ms: int, hi_ms: int) -> Iterator[FlowRecord]:
    period = int(lab.mqtt_keepalive_s * 1000)
    lo_port, hi_port = lab.ephemeral_ports
    for device in lab.devices:
        if device == lab.broker:
            continue
        t = lo_ms + int(rng.integers(0, period))
        while t < hi_ms:
            yield _flow(device, int(rng.integers(lo_port, hi_port + 1)), lab.broker, lab.mqtt_port,
                        TCP, 2, 2, 132, 132, PSH | ACK, int(rng.integers(1, 50)), t)
            t += period


def _attack(phase: PhaseSpec, lab: LabConfig, rng: np.random.Generator, times: np.ndarray) -> Iterator[FlowRecord]:
    base = phase.src_port_base or 60000
    lo, hi = phase.target_port_range
    span = hi - lo + 1
    scan_order = rng.permutation(np.arange(lo, hi + 1)) if phase.kind == PhaseKind.PORT_SCAN else None
    for k, t in enumerate(times):
        t = int(t)
        sport = base + k % (65536 - base)
        if phase.kind == PhaseKind.SPOOF_DOS:
            pkts = int(rng.integers(1, 4))
            yield _flow(_spoofed_ip(rng), sport, phase.target_ip, phase.target_port or 22, TCP,
                        pkts, int(rng.integers(0, 2)), pkts * 40, 0, SYN, 0, t)
        elif phase.kind == PhaseKind.PORT_SCAN:
            yield _flow(lab.attacker, base, phase.target_ip, int(scan_order[k % span]), TCP,
                        1, 1, 44, 40, SYN | RST | ACK, int(rng.integers(0, 3)), t)
        elif phase.kind == PhaseKind.COMBINED_DOS:
            proto = (TCP, UDP, ICMP)[k % 3]
            pkts = int(rng.integers(5, 60))
            if proto == ICMP:
                yield _flow(_spoofed_ip(rng), 0, phase.target_ip, 0, ICMP, pkts, 0, pkts * 84, 0, 0,
                            int(rng.integers(0, 500)), t)
            else:
                yield _flow(_spoofed_ip(rng), sport, phase.target_ip, lo + k % span, proto, pkts, 0,
                            pkts * (40 if proto == TCP else 28), 0, SYN, int(rng.integers(0, 500)), t)
        elif phase.kind == PhaseKind.UDP_DOS:
            dport = phase.target_port if phase.target_port is not None else int(rng.integers(lo, hi + 1))
            pkts = int(rng.integers(10, 200))
            yield _flow(_spoofed_ip(rng), sport, phase.target_ip, dport, UDP, pkts, 0,
                        pkts * int(rng.integers(28, 512)), 0, 0, int(rng.integers(0, 1000)), t)
        elif phase.kind == PhaseKind.ICMP_DOS:
            pkts = int(rng.integers(10, 200))
            yield _flow(_spoofed_ip(rng), 0, phase.target_ip, 0, ICMP, pkts, 0, pkts * 84, 0, 0,
                        int(rng.integers(0, 1000)), t)


def rules_for_phases(phases: Sequence[PhaseSpec], lab: Optional[LabConfig] = None,
                     start_ms: int = 0) -> List[GroundTruthRule]:
    """One ground-truth rule per attack phase, from its logged target, ports and window."""
    lab = lab or LabConfig()
    rules = []
    for p in phases:
        if p.kind == PhaseKind.BENIGN:
            continue
        lo, hi = _window_ms(p, start_ms)
        common = dict(name=p.name, label=p.label, target_ip=p.target_ip,
                      window_start_ms=lo, window_end_ms=hi)
        if p.kind == PhaseKind.SPOOF_DOS:
            rules.append(GroundTruthRule(**common, protocols=[TCP], dst_port=p.target_port or 22,
                                         src_port_min=p.src_port_base))
        elif p.kind == PhaseKind.PORT_SCAN:
            rules.append(GroundTruthRule(**common, protocols=[TCP], src_ip=lab.attacker,
                                         src_port=p.src_port_base))
        elif p.kind == PhaseKind.COMBINED_DOS:
            rules.append(GroundTruthRule(**common, protocols=[TCP, UDP, ICMP], src_port_min=p.src_port_base))
        elif p.kind == PhaseKind.UDP_DOS:
            rules.append(GroundTruthRule(**common, protocols=[UDP], src_port_min=p.src_port_base))
        else:
            rules.append(GroundTruthRule(**common, protocols=[ICMP]))
    return rules


def label_flows(flows: Sequence[FlowRecord], rules: Sequence[GroundTruthRule]) -> List[FlowRecord]:
    """Attack label from the first matching rule; every other flow is benign."""
    labeled = []
    for f in flows:
        rule = next((r for r in rules if r.matches(f)), None)
        if rule is None:
            labeled.append(f.model_copy(update={"attack": 0, "label": BENIGN}))
        else:
            labeled.append(f.model_copy(update={"attack": 1, "label": rule.label}))
    return labeled


def generate_session(phases: Sequence[PhaseSpec], lab: Optional[LabConfig] = None, seed: int = 0,
                     start_ms: int = 0, name: str = "session",
                     dataset_source: str = "testbed", rate_scale: float = 1.0) -> List[FlowRecord]:
    """Generate, timestamp-merge and label one session; deterministic given seed."""
    lab = lab or LabConfig()
    ordered = _check_phases(phases)
    stamped: List[_Stamped] = []

    for order, phase in enumerate(ordered):
        rng = np.random.default_rng([seed, phase.seed, order])
        lo, hi = _window_ms(phase, start_ms)
        if phase.kind == PhaseKind.BENIGN:
            times = _times(rng, lo, hi, round_half_up(phase.rate * rate_scale * phase.duration_s))
            flows = list(_benign(lab, rng, times))
        else:
            times = _times(rng, lo, hi, round_half_up(phase.rate * rate_scale * phase.duration_s))
            flows = list(_attack(phase, lab, rng, times))
            if phase.background_rate:
                bg = _times(rng, lo, hi, round_half_up(phase.background_rate * rate_scale * phase.duration_s))
                flows += list(_benign(lab, rng, bg))
        stamped += [(f.flow_start_ms, order, i, f) for i, f in enumerate(flows)]

    ka_rng = np.random.default_rng([seed, len(ordered)])
    span = (_window_ms(ordered[0], start_ms)[0], _window_ms(ordered[-1], start_ms)[1])
    stamped += [(f.flow_start_ms, len(ordered), i, f) for i, f in enumerate(_keepalives(lab, ka_rng, *span))]

    stamped.sort(key=lambda s: s[:3])
    flows = [f.model_copy(update={"flow_id": f"{name}-{i:06d}", "dataset_source": dataset_source})
             for i, (_, _, _, f) in enumerate(stamped)]
    labeled = label_flows(flows, rules_for_phases(ordered, lab, start_ms))
    n_attack = sum(f.attack for f in labeled)
    logger.info(f"Generated session {name}: {len(labeled)} flows ({n_attack} attack)")
    return labeled


def load_sessions(path: Optional[Union[str, Path]] = None) -> Tuple[LabConfig, List[SessionSpec]]:
    data = load_yaml(path or SESSIONS_PATH)
    lab = LabConfig.model_validate(data.get("lab", {}))
    sessions = [SessionSpec.model_validate(s) for s in data.get("sessions", [])]
    return lab, sessions


def generate_sessions(sessions: Sequence[SessionSpec], lab: Optional[LabConfig] = None,
                      seed: int = 0, dataset_source: str = "testbed",
                      rate_scale: float = 1.0) -> List[FlowRecord]:
    flows: List[FlowRecord] = []
    for i, s in enumerate(sessions):
        flows += generate_session(s.phases, lab, seed=seed * 1000 + s.seed + i, start_ms=s.start_ms,
                                  name=f"{dataset_source}-{s.name}", dataset_source=dataset_source,
                                  rate_scale=rate_scale)
    return flows


def to_raw_frame(flows: Sequence[FlowRecord]) -> pd.DataFrame:
    """CICFlowMeter-style layout (durations in microseconds) for exercising the standardizer."""
    return pd.DataFrame({
        "Flow ID": [f.flow_id for f in flows],
        "Src IP": [str(f.src_addr) for f in flows],
        "Src Port": [f.src_port for f in flows],
        "Dst IP": [str(f.dst_addr) for f in flows],
        "Dst Port": [f.dst_port for f in flows],
        "Protocol": [f.protocol for f in flows],
        "Timestamp Ms": [f.flow_start_ms for f in flows],
        "Flow Duration": [f.flow_duration_ms * 1000 for f in flows],
        "Tot Fwd Pkts": [f.in_pkts for f in flows],
        "Tot Bwd Pkts": [f.out_pkts for f in flows],
        "TotLen Fwd Pkts": [f.in_bytes for f in flows],
        "TotLen Bwd Pkts": [f.out_bytes for f in flows],
        "Label": [f.label for f in flows],
    })
