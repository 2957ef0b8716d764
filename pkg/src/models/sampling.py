from typing import Dict, List
from pydantic import BaseModel, ConfigDict, Field, model_validator


class SamplingConfig(BaseModel):
    """Adaptive per-class retention parameters. Defaults are heuristic."""

    model_config = ConfigDict(frozen=True)

    r_base: float = Field(default=0.05, gt=0, le=1)
    p_rare: float = Field(default=0.001, ge=0, le=1)
    p_uncommon: float = Field(default=0.01, ge=0, le=1)
    m_rare: float = Field(default=10.0, gt=0)
    m_uncommon: float = Field(default=5.0, gt=0)
    m_common: float = Field(default=1.0, gt=0)
    r_high: float = Field(default=0.5, gt=0, le=1)
    n_min: int = Field(default=1000, ge=0)

    @model_validator(mode="after")
    def _thresholds_ordered(self):
        if not self.p_rare < self.p_uncommon:
            raise ValueError("p_rare must be < p_uncommon")
        return self


class ClassRate(BaseModel):
    label: str
    n_c: int
    rate: float
    expected_count: float
    selected_count: int
    branch: str


class SamplingPlan(BaseModel):
    classes: List[ClassRate]
    n_total: int
    expected_total: float
    selected_total: int
    theta_rare: float
    theta_uncommon: float
    config: SamplingConfig

    @model_validator(mode="after")
    def _rates_in_range(self):
        for c in self.classes:
            if not 0 < c.rate <= 1:
                raise ValueError(f"Rate for {c.label} out of (0, 1]: {c.rate}")
            if c.n_c < self.config.n_min and c.rate != 1.0:
                raise ValueError(f"Class {c.label} below n_min must be kept whole")
        return self

    def rate_for(self, label: str) -> float:
        return self.by_label()[label].rate

    def by_label(self) -> Dict[str, ClassRate]:
        return {c.label: c for c in self.classes}
