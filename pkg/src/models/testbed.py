from enum import Enum
from ipaddress import IPv4Address
from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.models.flow import BENIGN, FlowRecord


class PhaseKind(str, Enum):
    BENIGN = "Benign"
    SPOOF_DOS = "SpoofDoS"
    PORT_SCAN = "PortScan"
    COMBINED_DOS = "CombinedDoS"
    UDP_DOS = "UdpDoS"
    ICMP_DOS = "IcmpDoS"


ATTACK_LABELS = {
    PhaseKind.SPOOF_DOS: "DoS",
    PhaseKind.PORT_SCAN: "Reconnaissance",
    PhaseKind.COMBINED_DOS: "DoS",
    PhaseKind.UDP_DOS: "DoS",
    PhaseKind.ICMP_DOS: "DoS",
}


class LabConfig(BaseModel):
    """Addresses of the simulated lab network."""

    model_config = ConfigDict(frozen=True)

    devices: List[str] = Field(default_factory=lambda: [
        "192.168.2.3", "192.168.2.6", "192.168.2.8", "192.168.2.15"])
    attacker: str = "192.168.2.4"
    broker: str = "192.168.2.3"
    mqtt_port: int = 8883
    http_server: str = "192.168.2.15"
    http_port: int = 80
    mqtt_keepalive_s: float = Field(default=30.0, gt=0)
    ephemeral_ports: Tuple[int, int] = (32768, 60001)
    mqtt_share: float = Field(default=0.7, ge=0, le=1)

    @model_validator(mode="after")
    def _addresses(self):
        for ip in [*self.devices, self.attacker, self.broker, self.http_server]:
            IPv4Address(ip)
        if self.broker not in self.devices or self.http_server not in self.devices:
            raise ValueError("Broker and HTTP server must be lab devices")
        return self


class PhaseSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    kind: PhaseKind
    start_s: float = Field(ge=0)
    end_s: float
    rate: float = Field(default=1.0, ge=0)
    target_ip: Optional[str] = None
    target_port: Optional[int] = Field(default=None, ge=0, le=65535)
    target_port_range: Tuple[int, int] = (1, 1024)
    src_port_base: Optional[int] = Field(default=None, ge=1024, le=65535)
    background_rate: float = Field(default=0.0, ge=0)
    seed: int = 0

    @model_validator(mode="after")
    def _window(self):
        if not self.end_s > self.start_s:
            raise ValueError(f"Phase {self.name}: end_s must be after start_s")
        lo, hi = self.target_port_range
        if not 0 < lo <= hi <= 65535:
            raise ValueError(f"Phase {self.name}: bad target_port_range {self.target_port_range}")
        if self.kind != PhaseKind.BENIGN and self.target_ip is None:
            raise ValueError(f"Phase {self.name}: attack phases need a target_ip")
        return self

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s

    @property
    def label(self) -> str:
        return ATTACK_LABELS.get(self.kind, BENIGN)


class SessionSpec(BaseModel):
    name: str
    start_ms: int = Field(default=0, ge=0)
    seed: int = 0
    phases: List[PhaseSpec]


class GroundTruthRule(BaseModel):
    """Attack predicate over target, ports, protocol and time window."""

    model_config = ConfigDict(frozen=True)

    name: str
    label: str
    target_ip: str
    protocols: List[int]
    window_start_ms: int
    window_end_ms: int
    dst_port: Optional[int] = None
    src_port_min: Optional[int] = None
    src_ip: Optional[str] = None
    src_port: Optional[int] = None

    def matches(self, flow: FlowRecord) -> bool:
        if flow.flow_start_ms is None:
            return False
        if not self.window_start_ms <= flow.flow_start_ms < self.window_end_ms:
            return False
        if str(flow.dst_addr) != self.target_ip or flow.protocol not in self.protocols:
            return False
        if self.src_ip is not None and str(flow.src_addr) != self.src_ip:
            return False
        if self.dst_port is not None and flow.dst_port != self.dst_port:
            return False
        if self.src_port is not None and flow.src_port != self.src_port:
            return False
        # port patterns do not apply to ICMP
        if self.src_port_min is not None and flow.protocol != 1 and flow.src_port < self.src_port_min:
            return False
        return True
