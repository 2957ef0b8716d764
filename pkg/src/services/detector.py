"""Reference edge classifier with analytic input gradients, plus the metric suite."""
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit
from sklearn.metrics import (
    accuracy_score,
    confusion_matrix,
    f1_score,
    precision_score,
    recall_score,
    roc_auc_score,
)

from src.core.errors import DetectorError
from src.models.detector import DetectorConfig, DetectorModel, Metrics
from src.models.flow import FlowRecord, ScalerStats
from src.models.graph import CommGraph
from src.services.graph_builder import build_graph
from src.utils.logger import logger

Params = Tuple[np.ndarray, np.ndarray, np.ndarray, float]


def _check_widths(model: DetectorModel, graph: CommGraph) -> None:
    if list(graph.feature_names) != model.feature_names:
        raise DetectorError(
            f"Edge feature mismatch: graph {list(graph.feature_names)} vs model {model.feature_names}"
        )
    if graph.node_feature_width != model.node_feature_width:
        raise DetectorError(
            f"Node feature width {graph.node_feature_width} != model {model.node_feature_width}"
        )


def _inputs(graph: CommGraph, features: Optional[np.ndarray] = None) -> np.ndarray:
    X = graph.features if features is None else np.asarray(features, dtype=np.float64)
    if X.shape != graph.features.shape:
        raise DetectorError(f"Feature matrix shape {X.shape} != {graph.features.shape}")
    nf = graph.node_features
    node_part = (nf[graph.src] + nf[graph.dst]) / 2.0
    return np.hstack([X, node_part])


def _forward(params: Params, Z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    W1, b1, w2, b2 = params
    h = np.tanh(Z @ W1 + b1)
    return h, h @ w2 + b2


def _labels(graph: CommGraph, labels: Optional[np.ndarray]) -> np.ndarray:
    y = graph.attack if labels is None else np.asarray(labels)
    if y.shape != (graph.num_edges,):
        raise DetectorError(f"Expected {graph.num_edges} labels, got {y.shape}")
    return y.astype(np.float64)


def _bce(logits: np.ndarray, y: np.ndarray) -> float:
    # summed binary cross-entropy on logits
    return float(np.sum(np.logaddexp(0.0, logits) - y * logits))


def init_model(feature_names, node_feature_width: int, seed: int,
               config: Optional[DetectorConfig] = None) -> DetectorModel:
    config = config or DetectorConfig()
    d_in = len(feature_names) + node_feature_width
    rng = np.random.default_rng(seed)
    W1 = rng.normal(0.0, np.sqrt(1.0 / d_in), size=(d_in, config.hidden))
    w2 = rng.normal(0.0, np.sqrt(1.0 / config.hidden), size=config.hidden)
    return DetectorModel.from_arrays(W1, np.zeros(config.hidden), w2, 0.0,
                                     feature_names, node_feature_width, seed, config)


def train(graph: CommGraph, labels: Optional[np.ndarray] = None, seed: int = 0,
          config: Optional[DetectorConfig] = None, stats: Optional[ScalerStats] = None) -> DetectorModel:
    """Full-batch Adam on summed cross-entropy; deterministic given seed.

    `stats` (the scaler the graph was built with) is stored on the model.
    """
    config = config or DetectorConfig()
    y = _labels(graph, labels)
    if graph.num_edges == 0 or len(np.unique(y)) < 2:
        raise DetectorError("Training edges must contain both benign and attack labels")

    model = init_model(graph.feature_names, graph.node_feature_width, seed, config)
    W1, b1, w2, b2 = model.arrays()
    Z = _inputs(graph)
    params = [W1, b1, w2, np.array(b2)]
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    b1_, b2_ = config.beta1, config.beta2

    start_loss = _bce(_forward((W1, b1, w2, b2), Z)[1], y)
    for t in range(1, config.epochs + 1):
        W1, b1, w2, b2v = params
        h, logits = _forward((W1, b1, w2, float(b2v)), Z)
        g = expit(logits) - y
        gh = np.outer(g, w2) * (1.0 - h ** 2)
        grads = [Z.T @ gh, gh.sum(axis=0), h.T @ g, np.array(g.sum())]
        for i, grad in enumerate(grads):
            m[i] = b1_ * m[i] + (1 - b1_) * grad
            v[i] = b2_ * v[i] + (1 - b2_) * grad ** 2
            m_hat = m[i] / (1 - b1_ ** t)
            v_hat = v[i] / (1 - b2_ ** t)
            params[i] = params[i] - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)

    W1, b1, w2, b2v = params
    trained = DetectorModel.from_arrays(W1, b1, w2, float(b2v), graph.feature_names,
                                        graph.node_feature_width, seed, config)
    if stats is not None:
        trained = DetectorModel.model_validate({**trained.model_dump(), "scaler": stats.model_dump()})
    end_loss = _bce(_forward(trained.arrays(), Z)[1], y)
    logger.info(f"Trained detector on {graph.num_edges} edges: loss {start_loss:.4f} -> {end_loss:.4f}")
    return trained


def predict(model: DetectorModel, graph: CommGraph, features: Optional[np.ndarray] = None) -> np.ndarray:
    _check_widths(model, graph)
    _, logits = _forward(model.arrays(), _inputs(graph, features))
    return expit(logits)


def score_flows(model: DetectorModel, flows: Sequence[FlowRecord]) -> np.ndarray:
    """Attack scores for unscaled flows, using the scaler stored on the model."""
    if model.scaler is None:
        raise DetectorError("Model carries no scaler statistics; score a prebuilt graph instead")
    graph = build_graph(flows, model.feature_names, model.scaler, model.node_feature_width)
    return predict(model, graph)


def loss(model: DetectorModel, graph: CommGraph, labels: Optional[np.ndarray] = None,
         features: Optional[np.ndarray] = None) -> float:
    _check_widths(model, graph)
    _, logits = _forward(model.arrays(), _inputs(graph, features))
    return _bce(logits, _labels(graph, labels))


def edge_losses(model: DetectorModel, graph: CommGraph, labels: Optional[np.ndarray] = None,
                features: Optional[np.ndarray] = None) -> np.ndarray:
    _check_widths(model, graph)
    _, logits = _forward(model.arrays(), _inputs(graph, features))
    return np.logaddexp(0.0, logits) - _labels(graph, labels) * logits


def loss_gradient(model: DetectorModel, graph: CommGraph, labels: Optional[np.ndarray] = None,
                  features: Optional[np.ndarray] = None) -> np.ndarray:
    """d(summed BCE)/d(edge features), node features held fixed. Shape (|E|, D)."""
    _check_widths(model, graph)
    W1, b1, w2, b2 = model.arrays()
    h, logits = _forward((W1, b1, w2, b2), _inputs(graph, features))
    g = expit(logits) - _labels(graph, labels)
    dZ = (np.outer(g, w2) * (1.0 - h ** 2)) @ W1.T
    return dZ[:, :len(model.feature_names)]


def evaluate(scores: np.ndarray, labels: np.ndarray, threshold: float = 0.5) -> Metrics:
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(np.int64)
    if scores.shape != y.shape:
        raise DetectorError(f"Scores {scores.shape} and labels {y.shape} differ in length")
    if y.size == 0:
        raise DetectorError("Cannot evaluate an empty prediction set")
    if not np.isin(y, (0, 1)).all():
        raise DetectorError("Labels must be binary 0/1")

    pred = (scores >= threshold).astype(np.int64)
    tn, fp, fn, tp = confusion_matrix(y, pred, labels=[0, 1]).ravel()
    if len(np.unique(y)) < 2:
        logger.warning("Only one class present in labels; AUC reported as 0.5")
        auc = 0.5
    else:
        auc = float(roc_auc_score(y, scores))
    return Metrics(
        accuracy=float(accuracy_score(y, pred)),
        precision_weighted=float(precision_score(y, pred, average="weighted", zero_division=0)),
        precision_attack=float(precision_score(y, pred, pos_label=1, zero_division=0)),
        recall=float(recall_score(y, pred, pos_label=1, zero_division=0)),
        f1_weighted=float(f1_score(y, pred, average="weighted", zero_division=0)),
        auc=auc,
        tp=int(tp), fp=int(fp), tn=int(tn), fn=int(fn),
    )


def evaluate_graph(model: DetectorModel, graph: CommGraph,
                   edge_mask: Optional[np.ndarray] = None) -> Metrics:
    scores = predict(model, graph)
    y = graph.attack
    if edge_mask is not None:
        scores, y = scores[edge_mask], y[edge_mask]
    return evaluate(scores, y, model.config.threshold)


def save_model(model: DetectorModel, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(model.model_dump_json(indent=2), encoding="utf-8")
    return path


def load_model(path: Union[str, Path]) -> DetectorModel:
    return DetectorModel.model_validate_json(Path(path).read_text(encoding="utf-8"))
