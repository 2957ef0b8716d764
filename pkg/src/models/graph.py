from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Dict, Iterable, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from src.core.errors import GraphError
from src.models.flow import KEY_RAW_FEATURES

ORIGINAL = "original"
SYNTHETIC = "synthetic"
DEFAULT_NODE_FEATURE_WIDTH = 8


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CommGraph:
    """IP-centric communication multigraph: one node per address, one edge per flow.

    Arrays are read-only; every transformation returns a new graph.
    """

    nodes: Tuple[str, ...]
    node_features: np.ndarray
    node_synthetic: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    features: np.ndarray
    raw: np.ndarray
    attack: np.ndarray
    synthetic: np.ndarray
    flow_ids: Tuple[str, ...]
    labels: Tuple[str, ...]
    sources: Tuple[str, ...]
    feature_names: Tuple[str, ...]
    raw_names: Tuple[str, ...] = field(default=KEY_RAW_FEATURES)

    def __post_init__(self):
        for name in ("node_features", "node_synthetic", "src", "dst", "features",
                     "raw", "attack", "synthetic"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        n_v, n_e = len(self.nodes), len(self.src)
        if self.node_features.shape[0] != n_v or self.node_synthetic.shape != (n_v,):
            raise GraphError("Node arrays do not match node count")
        if len(set(self.nodes)) != n_v:
            raise GraphError("Duplicate node addresses")
        if not (self.dst.shape == (n_e,) and self.attack.shape == (n_e,)
                and self.synthetic.shape == (n_e,) and len(self.flow_ids) == n_e
                and len(self.labels) == n_e and len(self.sources) == n_e):
            raise GraphError("Edge arrays do not match edge count")
        if self.features.shape != (n_e, len(self.feature_names)):
            raise GraphError(f"Edge features shape {self.features.shape} != ({n_e}, {len(self.feature_names)})")
        if self.raw.shape != (n_e, len(self.raw_names)):
            raise GraphError("Raw feature matrix shape mismatch")
        if n_e and (self.src.min() < 0 or self.dst.min() < 0
                    or self.src.max() >= n_v or self.dst.max() >= n_v):
            raise GraphError("Edge endpoint references a missing node")

    @classmethod
    def empty(cls, feature_names: Sequence[str],
              node_feature_width: int = DEFAULT_NODE_FEATURE_WIDTH) -> "CommGraph":
        return cls(
            nodes=(),
            node_features=np.ones((0, node_feature_width)),
            node_synthetic=np.zeros(0, dtype=bool),
            src=np.zeros(0, dtype=np.int64),
            dst=np.zeros(0, dtype=np.int64),
            features=np.zeros((0, len(feature_names))),
            raw=np.zeros((0, len(KEY_RAW_FEATURES))),
            attack=np.zeros(0, dtype=np.int8),
            synthetic=np.zeros(0, dtype=bool),
            flow_ids=(), labels=(), sources=(),
            feature_names=tuple(feature_names),
        )

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_edges(self) -> int:
        return len(self.src)

    @property
    def node_feature_width(self) -> int:
        return self.node_features.shape[1]

    @cached_property
    def node_index(self) -> Dict[str, int]:
        return {ip: i for i, ip in enumerate(self.nodes)}

    def out_degree(self) -> np.ndarray:
        return np.bincount(self.src, minlength=self.num_nodes)

    def in_degree(self) -> np.ndarray:
        return np.bincount(self.dst, minlength=self.num_nodes)

    def provenance(self, e: int) -> str:
        return SYNTHETIC if self.synthetic[e] else ORIGINAL

    def edge_mask_original(self) -> np.ndarray:
        return ~self.synthetic

    def with_features(self, features: np.ndarray) -> "CommGraph":
        return replace(self, features=features)

    def select_edges(self, keep: np.ndarray) -> "CommGraph":
        """Keep edges where `keep` is True (bool mask) or listed (index array)."""
        idx = np.flatnonzero(keep) if keep.dtype == bool else np.asarray(keep, dtype=np.int64)
        return replace(
            self,
            src=self.src[idx], dst=self.dst[idx],
            features=self.features[idx], raw=self.raw[idx],
            attack=self.attack[idx], synthetic=self.synthetic[idx],
            flow_ids=tuple(self.flow_ids[i] for i in idx),
            labels=tuple(self.labels[i] for i in idx),
            sources=tuple(self.sources[i] for i in idx),
        )

    def drop_nodes(self, addresses: Iterable[str]) -> "CommGraph":
        """Remove nodes and every incident edge; survivors keep their order."""
        drop = {self.node_index[a] for a in addresses}
        if not drop:
            return self
        keep_nodes = np.array([i not in drop for i in range(self.num_nodes)], dtype=bool)
        remap = np.cumsum(keep_nodes) - 1
        keep_edges = keep_nodes[self.src] & keep_nodes[self.dst] if self.num_edges else np.zeros(0, dtype=bool)
        g = self.select_edges(keep_edges)
        return replace(
            g,
            nodes=tuple(n for i, n in enumerate(self.nodes) if keep_nodes[i]),
            node_features=self.node_features[keep_nodes],
            node_synthetic=self.node_synthetic[keep_nodes],
            src=remap[g.src], dst=remap[g.dst],
        )

    def add(self, nodes: Sequence[str], src: Sequence[int], dst: Sequence[int],
            features: np.ndarray, raw: np.ndarray, flow_ids: Sequence[str],
            labels: Sequence[str], sources: Sequence[str],
            attack: Optional[Sequence[int]] = None, synthetic: bool = True) -> "CommGraph":
        """Append nodes (uniform features) and edges; indices refer to the extended node list."""
        n_new = len(nodes)
        new_nf = np.ones((n_new, self.node_feature_width))
        n_e = len(src)
        attack_arr = np.ones(n_e, dtype=np.int8) if attack is None else np.asarray(attack, dtype=np.int8)
        return replace(
            self,
            nodes=self.nodes + tuple(nodes),
            node_features=np.vstack([self.node_features, new_nf]),
            node_synthetic=np.concatenate([self.node_synthetic, np.full(n_new, synthetic)]),
            src=np.concatenate([self.src, np.asarray(src, dtype=np.int64)]),
            dst=np.concatenate([self.dst, np.asarray(dst, dtype=np.int64)]),
            features=np.vstack([self.features, np.asarray(features, dtype=np.float64).reshape(n_e, len(self.feature_names))]),
            raw=np.vstack([self.raw, np.asarray(raw, dtype=np.float64).reshape(n_e, len(self.raw_names))]),
            attack=np.concatenate([self.attack, attack_arr]),
            synthetic=np.concatenate([self.synthetic, np.full(n_e, synthetic)]),
            flow_ids=self.flow_ids + tuple(flow_ids),
            labels=self.labels + tuple(labels),
            sources=self.sources + tuple(sources),
        )

    def to_networkx(self) -> nx.MultiDiGraph:
        g = nx.MultiDiGraph()
        for i, ip in enumerate(self.nodes):
            g.add_node(i, ip=ip, synthetic=bool(self.node_synthetic[i]))
        for e in range(self.num_edges):
            g.add_edge(int(self.src[e]), int(self.dst[e]), key=e,
                       flow_id=self.flow_ids[e], attack=int(self.attack[e]),
                       synthetic=bool(self.synthetic[e]))
        return g
