import json
from pathlib import Path
from typing import Dict, List, Sequence, Union

import numpy as np
import pandas as pd

from src.core.errors import GraphError
from src.models.flow import KEY_RAW_FEATURES, FlowRecord, ScalerStats
from src.models.graph import DEFAULT_NODE_FEATURE_WIDTH, ORIGINAL, SYNTHETIC, CommGraph
from src.services.standardizer import apply_scaler, feature_matrix
from src.utils.logger import logger

NODES_FILE = "nodes.csv"
EDGES_FILE = "edges.csv"
META_FILE = "meta.json"
_RAW_PREFIX = "raw:"
_NF_PREFIX = "nf:"


def build_graph(flows: Sequence[FlowRecord], features: Sequence[str], stats: ScalerStats,
                node_feature_width: int = DEFAULT_NODE_FEATURE_WIDTH) -> CommGraph:
    """One node per distinct address, one directed edge per flow (parallel edges kept)."""
    features = tuple(features)
    if not flows:
        return CommGraph.empty(features, node_feature_width)

    X = apply_scaler(flows, stats, features)
    index: Dict[str, int] = {}
    src: List[int] = []
    dst: List[int] = []
    for f in flows:
        s = index.setdefault(str(f.src_addr), len(index))
        d = index.setdefault(str(f.dst_addr), len(index))
        src.append(s)
        dst.append(d)

    n_v = len(index)
    graph = CommGraph(
        nodes=tuple(index),
        node_features=np.ones((n_v, node_feature_width)),
        node_synthetic=np.zeros(n_v, dtype=bool),
        src=np.asarray(src, dtype=np.int64),
        dst=np.asarray(dst, dtype=np.int64),
        features=X,
        raw=feature_matrix(flows, KEY_RAW_FEATURES),
        attack=np.asarray([f.attack for f in flows], dtype=np.int8),
        synthetic=np.zeros(len(flows), dtype=bool),
        flow_ids=tuple(f.flow_id for f in flows),
        labels=tuple(f.label for f in flows),
        sources=tuple(f.dataset_source for f in flows),
        feature_names=features,
    )
    logger.info(f"Built graph with {graph.num_nodes} nodes and {graph.num_edges} edges")
    return graph


def merge_graphs(graphs: Sequence[CommGraph]) -> CommGraph:
    """Union of several graphs; equal addresses collapse to one node."""
    if not graphs:
        raise GraphError("Nothing to merge")
    first = graphs[0]
    for g in graphs[1:]:
        if g.feature_names != first.feature_names:
            raise GraphError(f"Feature schema mismatch: {g.feature_names} vs {first.feature_names}")
        if g.node_feature_width != first.node_feature_width:
            raise GraphError("Node feature widths differ")

    index: Dict[str, int] = {}
    node_rows: List[np.ndarray] = []
    node_syn: List[bool] = []
    src_parts, dst_parts = [], []
    for g in graphs:
        remap = np.empty(g.num_nodes, dtype=np.int64)
        for i, ip in enumerate(g.nodes):
            if ip not in index:
                index[ip] = len(index)
                node_rows.append(g.node_features[i])
                node_syn.append(bool(g.node_synthetic[i]))
            remap[i] = index[ip]
        src_parts.append(remap[g.src])
        dst_parts.append(remap[g.dst])

    width = first.node_feature_width
    return CommGraph(
        nodes=tuple(index),
        node_features=np.vstack(node_rows) if node_rows else np.ones((0, width)),
        node_synthetic=np.asarray(node_syn, dtype=bool),
        src=np.concatenate(src_parts),
        dst=np.concatenate(dst_parts),
        features=np.vstack([g.features for g in graphs]),
        raw=np.vstack([g.raw for g in graphs]),
        attack=np.concatenate([g.attack for g in graphs]),
        synthetic=np.concatenate([g.synthetic for g in graphs]),
        flow_ids=sum((g.flow_ids for g in graphs), ()),
        labels=sum((g.labels for g in graphs), ()),
        sources=sum((g.sources for g in graphs), ()),
        feature_names=first.feature_names,
    )


def build_unified_graph(flow_sets: Sequence[Sequence[FlowRecord]], features: Sequence[str],
                        stats: ScalerStats,
                        node_feature_width: int = DEFAULT_NODE_FEATURE_WIDTH) -> CommGraph:
    return merge_graphs([build_graph(f, features, stats, node_feature_width) for f in flow_sets])


def sample_subgraph(graph: CommGraph, n_nodes: int, seed: int) -> CommGraph:
    """Induced subgraph on `n_nodes` original nodes.

    Endpoints of edges visited in seeded random order are taken until enough
    nodes are chosen; isolated nodes fill any remainder. Every edge between
    chosen nodes is kept and survivors keep their order.
    """
    originals = ~graph.node_synthetic
    available = int(originals.sum())
    if not 1 <= n_nodes <= available:
        raise GraphError(f"Cannot sample {n_nodes} nodes from {available} original nodes")
    rng = np.random.default_rng(seed)
    chosen: set = set()
    for e in rng.permutation(graph.num_edges):
        for v in (int(graph.src[e]), int(graph.dst[e])):
            if len(chosen) < n_nodes and originals[v]:
                chosen.add(v)
        if len(chosen) == n_nodes:
            break
    if len(chosen) < n_nodes:
        rest = [int(v) for v in rng.permutation(graph.num_nodes) if originals[v] and int(v) not in chosen]
        chosen.update(rest[: n_nodes - len(chosen)])
    sub = graph.drop_nodes(ip for i, ip in enumerate(graph.nodes) if i not in chosen)
    logger.debug(f"Sampled {sub.num_nodes} nodes / {sub.num_edges} edges from "
                 f"{graph.num_nodes} nodes / {graph.num_edges} edges")
    return sub


def write_graph(graph: CommGraph, directory: Union[str, Path]) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    nodes = pd.DataFrame({"node_id": range(graph.num_nodes), "ip": list(graph.nodes),
                          "synthetic": graph.node_synthetic.astype(int)})
    for j in range(graph.node_feature_width):
        nodes[f"{_NF_PREFIX}{j}"] = graph.node_features[:, j]
    nodes.to_csv(directory / NODES_FILE, index=False, float_format="%.17g")

    edges = pd.DataFrame({
        "src_id": graph.src, "dst_id": graph.dst,
        "flow_id": list(graph.flow_ids),
        "provenance": [SYNTHETIC if s else ORIGINAL for s in graph.synthetic],
        "label": list(graph.labels),
        "attack": graph.attack.astype(int),
        "dataset_source": list(graph.sources),
    })
    for j, name in enumerate(graph.feature_names):
        edges[name] = graph.features[:, j]
    for j, name in enumerate(graph.raw_names):
        edges[f"{_RAW_PREFIX}{name}"] = graph.raw[:, j]
    edges.to_csv(directory / EDGES_FILE, index=False, float_format="%.17g")

    meta = {"feature_names": list(graph.feature_names), "raw_names": list(graph.raw_names),
            "node_feature_width": graph.node_feature_width}
    (directory / META_FILE).write_text(json.dumps(meta, indent=2), encoding="utf-8")
    return directory


def read_graph(directory: Union[str, Path]) -> CommGraph:
    directory = Path(directory)
    meta = json.loads((directory / META_FILE).read_text(encoding="utf-8"))
    feature_names = tuple(meta["feature_names"])
    raw_names = tuple(meta["raw_names"])
    width = int(meta["node_feature_width"])

    nodes = pd.read_csv(directory / NODES_FILE, dtype={"ip": str}, float_precision="round_trip")
    edges = pd.read_csv(directory / EDGES_FILE,
                        dtype={"flow_id": str, "provenance": str, "label": str, "dataset_source": str},
                        float_precision="round_trip")
    if list(nodes["node_id"]) != list(range(len(nodes))):
        raise GraphError("nodes.csv node_id column must be 0..n-1 in order")
    nf_cols = [f"{_NF_PREFIX}{j}" for j in range(width)]
    return CommGraph(
        nodes=tuple(nodes["ip"]),
        node_features=nodes[nf_cols].to_numpy(dtype=np.float64).reshape(len(nodes), width),
        node_synthetic=nodes["synthetic"].to_numpy().astype(bool),
        src=edges["src_id"].to_numpy(dtype=np.int64),
        dst=edges["dst_id"].to_numpy(dtype=np.int64),
        features=edges[list(feature_names)].to_numpy(dtype=np.float64).reshape(len(edges), len(feature_names)),
        raw=edges[[f"{_RAW_PREFIX}{n}" for n in raw_names]].to_numpy(dtype=np.float64).reshape(len(edges), len(raw_names)),
        attack=edges["attack"].to_numpy().astype(np.int8),
        synthetic=(edges["provenance"] == SYNTHETIC).to_numpy(),
        flow_ids=tuple(edges["flow_id"]),
        labels=tuple(edges["label"]),
        sources=tuple(edges["dataset_source"]),
        feature_names=feature_names,
        raw_names=raw_names,
    )
