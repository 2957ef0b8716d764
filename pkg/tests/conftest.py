import sys
import os

import numpy as np
import pytest

# Add src to path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from src.models.flow import KEY_RAW_FEATURES, FlowRecord
from src.models.graph import CommGraph


def make_flow(i, src="10.0.0.1", dst="10.0.0.2", attack=0, label=None, **overrides):
    row = dict(
        IPV4_SRC_ADDR=src, L4_SRC_PORT=40000 + i % 1000,
        IPV4_DST_ADDR=dst, L4_DST_PORT=80,
        PROTOCOL=6, L7_PROTO=7,
        IN_BYTES=100 + i, OUT_BYTES=200, IN_PKTS=2, OUT_PKTS=2,
        TCP_FLAGS=27, FLOW_DURATION_MILLISECONDS=10,
        flow_id=f"f{i}", dataset_source="test",
        Attack=attack, Label=label or ("DoS" if attack else "Benign"),
    )
    row.update(overrides)
    return FlowRecord(**row)


def make_graph(X, y, src=None, dst=None, n_nodes=None, node_width=2, feature_names=None):
    """Graph straight from arrays; node features are all ones."""
    X = np.asarray(X, dtype=np.float64)
    n_e = X.shape[0]
    if src is None:
        src = np.arange(n_e) % 7
        dst = (np.arange(n_e) + 1) % 7
    n_v = n_nodes or int(max(np.max(src, initial=0), np.max(dst, initial=0)) + 1)
    return CommGraph(
        nodes=tuple(f"10.1.{i // 250}.{i % 250 + 1}" for i in range(n_v)),
        node_features=np.ones((n_v, node_width)),
        node_synthetic=np.zeros(n_v, dtype=bool),
        src=np.asarray(src, dtype=np.int64),
        dst=np.asarray(dst, dtype=np.int64),
        features=X,
        raw=np.zeros((n_e, len(KEY_RAW_FEATURES))),
        attack=np.asarray(y, dtype=np.int8),
        synthetic=np.zeros(n_e, dtype=bool),
        flow_ids=tuple(f"e{i}" for i in range(n_e)),
        labels=tuple("DoS" if v else "Benign" for v in y),
        sources=("test",) * n_e,
        feature_names=tuple(feature_names or (f"x{j}" for j in range(X.shape[1]))),
    )


def random_flows(rng, n, n_hosts=20, attack_share=0.3, source="test", prefix="f"):
    flows = []
    for i in range(n):
        attack = int(rng.uniform() < attack_share)
        flows.append(make_flow(
            i,
            src=f"10.0.{int(rng.integers(0, 2))}.{int(rng.integers(1, n_hosts + 1))}",
            dst=f"10.0.{int(rng.integers(0, 2))}.{int(rng.integers(1, n_hosts + 1))}",
            attack=attack,
            IN_BYTES=int(rng.integers(20000, 60000) if attack else rng.integers(100, 5000)),
            IN_PKTS=int(rng.integers(200, 600) if attack else rng.integers(1, 20)),
            OUT_BYTES=int(0 if attack else rng.integers(100, 9000)),
            L4_SRC_PORT=int(rng.integers(1024, 65536)),
            flow_id=f"{prefix}{i}", dataset_source=source,
        ))
    return flows


@pytest.fixture
def flow_factory():
    return make_flow


@pytest.fixture
def graph_factory():
    return make_graph


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
