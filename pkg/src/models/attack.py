from dataclasses import dataclass
from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.models.graph import CommGraph


class AttackKind(str, Enum):
    PGD = "PGD"
    EDGE_REMOVE = "EdgeRemove"
    NODE_INJECT = "NodeInject"


class AttackConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: AttackKind
    epsilon: float = Field(default=0.0, ge=0)
    steps: int = Field(default=10, ge=1)
    step_size: Optional[float] = Field(default=None, gt=0)
    clip_to_train_range: bool = False
    fraction: float = Field(default=0.0, ge=0, le=1)
    edges_per_node: int = Field(default=5, ge=1)
    seed: int = 0

    @property
    def effective_step_size(self) -> float:
        return self.step_size if self.step_size is not None else self.epsilon / 4.0

    @property
    def param(self) -> float:
        return self.epsilon if self.kind == AttackKind.PGD else self.fraction

    @property
    def condition(self) -> str:
        if self.kind == AttackKind.PGD:
            return f"PGD(eps={self.epsilon:g})"
        return f"{self.kind.value}({self.fraction * 100:g}%)"


class RemovedEdge(BaseModel):
    """Edge position in the clean graph; flow_id is unique only within its dataset."""

    index: int
    flow_id: str
    dataset_source: str


class PerturbedEdge(BaseModel):
    flow_id: str
    index: int
    linf: float
    delta: List[float]


class InjectedEdge(BaseModel):
    flow_id: str
    src: str
    dst: str
    features: List[float]
    raw: List[float]


class AttackManifest(BaseModel):
    """Exact delta between the clean graph and the attacked graph."""

    config: AttackConfig
    removed_edges: List[RemovedEdge] = Field(default_factory=list)
    injected_nodes: List[str] = Field(default_factory=list)
    injected_edges: List[InjectedEdge] = Field(default_factory=list)
    perturbed_edges: List[PerturbedEdge] = Field(default_factory=list)

    @model_validator(mode="after")
    def _kind_matches(self):
        kind = self.config.kind
        if kind != AttackKind.EDGE_REMOVE and self.removed_edges:
            raise ValueError("Only EdgeRemove manifests list removed edges")
        if kind != AttackKind.NODE_INJECT and (self.injected_nodes or self.injected_edges):
            raise ValueError("Only NodeInject manifests list injected nodes")
        if kind != AttackKind.PGD and self.perturbed_edges:
            raise ValueError("Only PGD manifests list perturbed edges")
        return self

    @property
    def max_linf(self) -> float:
        return max((p.linf for p in self.perturbed_edges), default=0.0)


@dataclass(frozen=True)
class AttackedGraph:
    graph: CommGraph
    manifest: AttackManifest


class AttackGrid(BaseModel):
    """Parameter lists per attack family; percentages are given as fractions."""

    pgd_epsilons: List[float] = Field(default_factory=list)
    edge_remove_fractions: List[float] = Field(default_factory=list)
    node_inject_fractions: List[float] = Field(default_factory=list)
    pgd_steps: int = Field(default=10, ge=1)
    clip_to_train_range: bool = False
    edges_per_node: int = Field(default=5, ge=1)

    @model_validator(mode="after")
    def _distinct_conditions(self):
        # one condition name per entry
        for name, label in (("pgd_epsilons", lambda v: f"{v:g}"),
                            ("edge_remove_fractions", lambda v: f"{v * 100:g}"),
                            ("node_inject_fractions", lambda v: f"{v * 100:g}")):
            labels = [label(v) for v in getattr(self, name)]
            if len(set(labels)) != len(labels):
                raise ValueError(f"Duplicate entries in {name}: {getattr(self, name)}")
        return self
