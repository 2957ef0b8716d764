from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.models.flow import ScalerStats


class DetectorConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    hidden: int = Field(default=16, ge=1)
    learning_rate: float = Field(default=0.01, gt=0)
    epochs: int = Field(default=300, ge=0)
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    threshold: float = Field(default=0.5, ge=0, le=1)


class DetectorModel(BaseModel):
    """Two-layer perceptron over [edge features ++ mean endpoint node features]."""

    feature_names: List[str]
    node_feature_width: int
    W1: List[List[float]]
    b1: List[float]
    w2: List[float]
    b2: float
    seed: int = 0
    config: DetectorConfig = Field(default_factory=DetectorConfig)
    # statistics the edge features were scaled with; lets a saved model score raw flows
    scaler: Optional[ScalerStats] = None

    @model_validator(mode="after")
    def _shapes_and_finite(self):
        d_in = len(self.feature_names) + self.node_feature_width
        W1 = np.asarray(self.W1, dtype=np.float64)
        if W1.shape != (d_in, len(self.b1)) or len(self.w2) != len(self.b1):
            raise ValueError(f"Parameter shapes inconsistent with input width {d_in}")
        for name, arr in (("W1", W1), ("b1", self.b1), ("w2", self.w2), ("b2", [self.b2])):
            if not np.all(np.isfinite(np.asarray(arr, dtype=np.float64))):
                raise ValueError(f"Non-finite values in {name}")
        if self.scaler is not None and list(self.scaler.feature_names) != self.feature_names:
            raise ValueError("Scaler features do not match the model features")
        return self

    @property
    def input_width(self) -> int:
        return len(self.feature_names) + self.node_feature_width

    def arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray, float]:
        return (np.asarray(self.W1, dtype=np.float64), np.asarray(self.b1, dtype=np.float64),
                np.asarray(self.w2, dtype=np.float64), float(self.b2))

    @classmethod
    def from_arrays(cls, W1, b1, w2, b2, feature_names, node_feature_width,
                    seed: int = 0, config: DetectorConfig = None) -> "DetectorModel":
        return cls(
            feature_names=list(feature_names),
            node_feature_width=node_feature_width,
            W1=np.asarray(W1, dtype=np.float64).tolist(),
            b1=np.asarray(b1, dtype=np.float64).tolist(),
            w2=np.asarray(w2, dtype=np.float64).tolist(),
            b2=float(b2),
            seed=seed,
            config=config or DetectorConfig(),
        )


class Metrics(BaseModel):
    accuracy: float
    precision_weighted: float
    precision_attack: float
    recall: float
    f1_weighted: float
    auc: float
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def scalars(self) -> dict:
        return self.model_dump()
