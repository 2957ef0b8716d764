from typing import Dict, List, Optional

from pydantic import BaseModel, Field, computed_field, field_validator, model_validator

from src.models.detector import Metrics


class FeatureDigest(BaseModel):
    count: int
    mean: Dict[str, float]
    max: Dict[str, float]


class NeighborDigest(BaseModel):
    address: str
    direction: str  # "to" or "from"
    flows: int
    bytes: float
    mean: Dict[str, float]


class NodeSummary(BaseModel):
    node: str
    num_total_nodes: int
    original_in: int = 0
    original_out: int = 0
    synthetic_in: int = 0
    synthetic_out: int = 0
    in_digest: Optional[FeatureDigest] = None
    out_digest: Optional[FeatureDigest] = None
    neighbors: List[NeighborDigest] = Field(default_factory=list)
    neighbors_truncated: int = 0

    @computed_field
    @property
    def in_edges(self) -> int:
        return self.original_in + self.synthetic_in

    @computed_field
    @property
    def out_edges(self) -> int:
        return self.original_out + self.synthetic_out

    @computed_field
    @property
    def total_edges(self) -> int:
        return self.in_edges + self.out_edges

    @property
    def synthetic_total(self) -> int:
        return self.synthetic_in + self.synthetic_out


class AnalystVerdict(BaseModel):
    node: str
    confidence: Optional[float] = Field(default=None, ge=0, le=1)
    rationale: str = ""
    attempts: int = 1

    @property
    def analyzed(self) -> bool:
        return self.confidence is not None

    def flags(self, threshold: float) -> bool:
        # unanalyzed nodes are never flagged
        return self.confidence is not None and self.confidence >= threshold


SAMPLE_PRESETS = {"small": 100, "large": 1000}


class MitigationConfig(BaseModel):
    client: str = "heuristic"
    threshold: float = Field(default=0.6, ge=0, le=1)
    max_neighbors: int = Field(default=20, ge=0)
    max_workers: Optional[int] = Field(default=None, ge=1)
    # None runs on the whole attacked test graph; otherwise on a fresh injection into a node sample
    sample_nodes: Optional[int] = Field(default=None, ge=1)

    @field_validator("sample_nodes", mode="before")
    @classmethod
    def _preset(cls, v):
        if isinstance(v, str) and not v.isdigit():
            if v not in SAMPLE_PRESETS:
                raise ValueError(f"Unknown sample preset {v!r}; known: {sorted(SAMPLE_PRESETS)}")
            return SAMPLE_PRESETS[v]
        return v


class MitigationReport(BaseModel):
    condition: str = ""
    nodes_before: int
    nodes_after: int
    injected_count: int
    flagged: List[str] = Field(default_factory=list)
    unanalyzed: List[str] = Field(default_factory=list)
    correctly_flagged: int
    incorrectly_flagged: int
    threshold: float
    metrics: Dict[str, Metrics] = Field(default_factory=dict)
    deltas: Dict[str, Dict[str, float]] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _bookkeeping(self):
        if self.correctly_flagged + self.incorrectly_flagged != len(self.flagged):
            raise ValueError("CF + IF must equal the number of flagged nodes")
        if self.nodes_after != self.nodes_before - self.correctly_flagged - self.incorrectly_flagged:
            raise ValueError("nodes_after must equal nodes_before - CF - IF")
        return self

    @computed_field
    @property
    def mitigation_recall(self) -> float:
        return self.correctly_flagged / self.injected_count if self.injected_count else 0.0
