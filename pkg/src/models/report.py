from typing import Any, Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, Field, model_validator

from src.models.attack import AttackGrid
from src.models.detector import DetectorConfig, Metrics
from src.models.flow import NUMERIC_FEATURES, SplitSpec
from src.models.graph import DEFAULT_NODE_FEATURE_WIDTH
from src.models.mitigation import MitigationConfig, MitigationReport
from src.models.sampling import SamplingConfig, SamplingPlan

STEPS = ("step1_baseline", "step2_drift", "step3_attacks", "step4_mitigation")


class SynthInput(BaseModel):
    """A dataset generated from testbed session presets instead of read from disk."""

    sessions: Optional[str] = None
    seed: int = 0
    rate_scale: float = Field(default=1.0, gt=0)
    raw_layout: str = "unified"
    lab: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _layout(self):
        if self.raw_layout not in ("unified", "cicflowmeter"):
            raise ValueError(f"Unknown raw_layout {self.raw_layout!r}")
        return self


class DatasetInput(BaseModel):
    name: str
    path: Optional[str] = None
    mapping: Optional[str] = None
    synth: Optional[SynthInput] = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.path is None) == (self.synth is None):
            raise ValueError(f"Dataset {self.name}: give exactly one of path or synth")
        return self


class RunConfig(BaseModel):
    name: str = "run"
    datasets: List[DatasetInput]
    sampling: Optional[SamplingConfig] = None
    split: SplitSpec = Field(default_factory=SplitSpec)
    features: List[str] = Field(default_factory=lambda: list(NUMERIC_FEATURES))
    node_feature_width: int = Field(default=DEFAULT_NODE_FEATURE_WIDTH, ge=1)
    detector: DetectorConfig = Field(default_factory=DetectorConfig)
    attack_grid: Union[str, AttackGrid] = "standard"
    mitigation: MitigationConfig = Field(default_factory=MitigationConfig)
    drift_pairs: Optional[List[Tuple[str, str]]] = None
    output_dir: Optional[str] = None
    seed: int = 0

    @model_validator(mode="after")
    def _names(self):
        names = [d.name for d in self.datasets]
        if len(set(names)) != len(names):
            raise ValueError("Dataset names must be unique")
        for a, b in self.drift_pairs or []:
            if a == b or a not in names or b not in names:
                raise ValueError(f"Bad drift pair ({a}, {b})")
        return self


class ConditionResult(BaseModel):
    step: str
    condition: str
    metrics: Metrics
    train_sources: List[str] = Field(default_factory=list)
    test_sources: List[str] = Field(default_factory=list)
    manifest: Optional[str] = None
    seed: Optional[int] = None


class StageFailure(BaseModel):
    stage: str
    error_type: str
    message: str


class Provenance(BaseModel):
    config_hash: str
    master_seed: int
    seeds: Dict[str, int] = Field(default_factory=dict)
    started_at: Optional[str] = None
    finished_at: Optional[str] = None


class ManifestRef(BaseModel):
    path: str
    digest: str


class RobustnessReport(BaseModel):
    name: str
    status: str = "complete"
    steps: Dict[str, List[ConditionResult]] = Field(default_factory=lambda: {s: [] for s in STEPS})
    sampling_plans: Dict[str, SamplingPlan] = Field(default_factory=dict)
    manifests: Dict[str, ManifestRef] = Field(default_factory=dict)
    mitigation: List[MitigationReport] = Field(default_factory=list)
    failures: List[StageFailure] = Field(default_factory=list)
    provenance: Provenance

    @property
    def partial(self) -> bool:
        return self.status != "complete"

    def conditions(self) -> List[ConditionResult]:
        return [c for s in STEPS for c in self.steps.get(s, [])]
