import ipaddress
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Set, Tuple, Union

import numpy as np

from src.core.errors import AttackError
from src.core.schema import PRESETS_DIR, load_yaml, round_half_up
from src.models.attack import (
    AttackConfig,
    AttackedGraph,
    AttackGrid,
    AttackKind,
    AttackManifest,
    InjectedEdge,
    PerturbedEdge,
    RemovedEdge,
)
from src.models.flow import KEY_RAW_FEATURES, FlowRecord, ScalerStats
from src.models.graph import CommGraph
from src.models.detector import DetectorModel
from src.services.detector import loss_gradient
from src.services.standardizer import apply_scaler, feature_matrix
from src.utils.logger import logger
from src.utils.seeds import derive_seed

ATTACK_GRIDS_PATH = PRESETS_DIR / "attack_grids.yaml"
INJECTION_POOL = ipaddress.IPv4Network("100.64.0.0/10")
INJECTED_LABEL = "DoS"
INJECTED_SOURCE = "injected"


def _require(cfg: AttackConfig, kind: AttackKind) -> None:
    if cfg.kind != kind:
        raise AttackError(f"Expected a {kind.value} config, got {cfg.kind.value}")


def feature_range(graph: CommGraph) -> Tuple[np.ndarray, np.ndarray]:
    """Per-column (min, max) of edge features, used to clip PGD."""
    if graph.num_edges == 0:
        raise AttackError("Feature range of an empty graph is undefined")
    return graph.features.min(axis=0), graph.features.max(axis=0)


def pgd_perturb(graph: CommGraph, model: DetectorModel, cfg: AttackConfig,
                labels: Optional[np.ndarray] = None,
                clip_range: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> AttackedGraph:
    """Sign-gradient ascent on the detector loss, projected onto the L-inf ball of radius epsilon."""
    _require(cfg, AttackKind.PGD)
    if cfg.epsilon < 0:
        raise AttackError(f"epsilon must be >= 0, got {cfg.epsilon}")
    if cfg.clip_to_train_range and clip_range is None:
        raise AttackError("clip_to_train_range set but no feature range given")

    X0 = graph.features
    delta = np.zeros_like(X0)
    step = cfg.effective_step_size
    for _ in range(cfg.steps):
        grad = loss_gradient(model, graph, labels, features=X0 + delta)
        X = X0 + delta + step * np.sign(grad)
        if cfg.clip_to_train_range:
            X = np.clip(X, clip_range[0], clip_range[1])
        # projection runs last so the ball constraint always holds
        delta = np.clip(X - X0, -cfg.epsilon, cfg.epsilon)

    perturbed = [
        PerturbedEdge(flow_id=graph.flow_ids[e], index=int(e),
                      linf=float(np.abs(delta[e]).max()), delta=delta[e].tolist())
        for e in np.flatnonzero(np.any(delta != 0, axis=1))
    ]
    manifest = AttackManifest(config=cfg, perturbed_edges=perturbed)
    logger.info(f"{cfg.condition}: perturbed {len(perturbed)}/{graph.num_edges} edges, "
                f"max L-inf {manifest.max_linf:.4g}")
    return AttackedGraph(graph=replay_manifest(graph, manifest), manifest=manifest)


def remove_edges(graph: CommGraph, cfg: AttackConfig) -> AttackedGraph:
    _require(cfg, AttackKind.EDGE_REMOVE)
    n_remove = min(graph.num_edges, round_half_up(cfg.fraction * graph.num_edges))
    rng = np.random.default_rng(cfg.seed)
    chosen = np.sort(rng.choice(graph.num_edges, size=n_remove, replace=False)) if n_remove else []
    manifest = AttackManifest(config=cfg, removed_edges=[
        RemovedEdge(index=int(e), flow_id=graph.flow_ids[e], dataset_source=graph.sources[e])
        for e in chosen
    ])
    logger.info(f"{cfg.condition}: removed {n_remove}/{graph.num_edges} edges")
    return AttackedGraph(graph=replay_manifest(graph, manifest), manifest=manifest)


class SynFloodSynthesizer:
    """High-volume TCP SYN flood flows from an injected node to a victim."""

    def __init__(self, stats: ScalerStats, dst_port: int = 80, l7_proto: int = 7,
                 pkts_range: Tuple[int, int] = (500, 5000), max_duration_ms: int = 1000):
        self.stats = stats
        self.dst_port = dst_port
        self.l7_proto = l7_proto
        self.pkts_range = pkts_range
        self.max_duration_ms = max_duration_ms

    def flow(self, src: str, dst: str, flow_id: str, rng: np.random.Generator) -> FlowRecord:
        pkts = int(rng.integers(*self.pkts_range))
        return FlowRecord(
            IPV4_SRC_ADDR=src,
            L4_SRC_PORT=int(rng.integers(1024, 65536)),
            IPV4_DST_ADDR=dst,
            L4_DST_PORT=self.dst_port,
            PROTOCOL=6,
            L7_PROTO=self.l7_proto,
            IN_BYTES=pkts * 60,
            OUT_BYTES=0,
            IN_PKTS=pkts,
            OUT_PKTS=0,
            TCP_FLAGS=0x02,
            FLOW_DURATION_MILLISECONDS=int(rng.integers(0, self.max_duration_ms + 1)),
            flow_id=flow_id,
            dataset_source=INJECTED_SOURCE,
            Attack=1,
            Label=INJECTED_LABEL,
        )

    def edge_features(self, flows: Sequence[FlowRecord]) -> Tuple[np.ndarray, np.ndarray]:
        """(scaled features, raw key features) for a batch of flows."""
        return apply_scaler(flows, self.stats), feature_matrix(flows, KEY_RAW_FEATURES)


def _free_addresses(taken: Set[str]) -> Iterator[str]:
    for ip in INJECTION_POOL.hosts():
        s = str(ip)
        if s not in taken:
            yield s


def inject_nodes(graph: CommGraph, cfg: AttackConfig, flow_synth: SynFloodSynthesizer) -> AttackedGraph:
    """Add round(fraction * |V_original|) attacker nodes, each with k edges to random original victims."""
    _require(cfg, AttackKind.NODE_INJECT)
    if graph.num_nodes == 0:
        raise AttackError("Cannot inject nodes into an empty graph")
    if tuple(flow_synth.stats.feature_names) != graph.feature_names:
        raise AttackError("Synthesizer scaler features do not match the graph")

    originals = np.flatnonzero(~graph.node_synthetic)
    n_inject = round_half_up(cfg.fraction * len(originals))
    k = min(cfg.edges_per_node, len(originals))
    rng = np.random.default_rng(cfg.seed)
    pool = _free_addresses(set(graph.nodes))

    new_nodes: List[str] = []
    flows: List[FlowRecord] = []
    for i in range(n_inject):
        addr = next(pool)
        new_nodes.append(addr)
        victims = rng.choice(originals, size=k, replace=False)
        for j, v in enumerate(victims):
            flows.append(flow_synth.flow(addr, graph.nodes[v], f"inj-{i}-{j}", rng))

    injected_edges: List[InjectedEdge] = []
    if flows:
        X, raw = flow_synth.edge_features(flows)
        injected_edges = [
            InjectedEdge(flow_id=f.flow_id, src=str(f.src_addr), dst=str(f.dst_addr),
                         features=X[e].tolist(), raw=raw[e].tolist())
            for e, f in enumerate(flows)
        ]
    manifest = AttackManifest(config=cfg, injected_nodes=new_nodes, injected_edges=injected_edges)
    logger.info(f"{cfg.condition}: injected {n_inject} nodes with {len(injected_edges)} edges")
    return AttackedGraph(graph=replay_manifest(graph, manifest), manifest=manifest)


def replay_manifest(clean: CommGraph, manifest: AttackManifest) -> CommGraph:
    """Rebuild the attacked graph from the clean graph and its manifest."""
    kind = manifest.config.kind
    if kind == AttackKind.EDGE_REMOVE:
        keep = np.ones(clean.num_edges, dtype=bool)
        for r in manifest.removed_edges:
            if (r.index >= clean.num_edges or clean.flow_ids[r.index] != r.flow_id
                    or clean.sources[r.index] != r.dataset_source):
                raise AttackError(f"Removed edge {r.dataset_source}/{r.flow_id} does not match the graph")
            if not keep[r.index]:
                raise AttackError(f"Edge {r.index} removed twice")
            keep[r.index] = False
        return clean.select_edges(keep)

    if kind == AttackKind.PGD:
        X = np.array(clean.features, copy=True)
        for p in manifest.perturbed_edges:
            if p.index >= clean.num_edges or clean.flow_ids[p.index] != p.flow_id:
                raise AttackError(f"Perturbed edge {p.flow_id} does not match the graph")
            X[p.index] = clean.features[p.index] + np.asarray(p.delta, dtype=np.float64)
        return clean.with_features(X)

    clash = set(manifest.injected_nodes) & set(clean.nodes)
    if clash:
        raise AttackError(f"Injected addresses already in graph: {sorted(clash)[:5]}")
    new_index = {ip: clean.num_nodes + i for i, ip in enumerate(manifest.injected_nodes)}
    edges = manifest.injected_edges
    try:
        src = [new_index[e.src] for e in edges]
        dst = [clean.node_index[e.dst] for e in edges]
    except KeyError as e:
        raise AttackError(f"Injected edge references unknown node {e}") from e
    return clean.add(
        nodes=manifest.injected_nodes,
        src=src, dst=dst,
        features=np.asarray([e.features for e in edges], dtype=np.float64).reshape(len(edges), clean.features.shape[1]),
        raw=np.asarray([e.raw for e in edges], dtype=np.float64).reshape(len(edges), len(clean.raw_names)),
        flow_ids=[e.flow_id for e in edges],
        labels=[INJECTED_LABEL] * len(edges),
        sources=[INJECTED_SOURCE] * len(edges),
    )


def run_attack(graph: CommGraph, cfg: AttackConfig, model: Optional[DetectorModel] = None,
               flow_synth: Optional[SynFloodSynthesizer] = None,
               clip_range: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> AttackedGraph:
    if cfg.kind == AttackKind.PGD:
        if model is None:
            raise AttackError("PGD needs a detector model")
        return pgd_perturb(graph, model, cfg, clip_range=clip_range)
    if cfg.kind == AttackKind.EDGE_REMOVE:
        return remove_edges(graph, cfg)
    if flow_synth is None:
        raise AttackError("NodeInject needs a flow synthesizer")
    return inject_nodes(graph, cfg, flow_synth)


def expand_grid(grid: AttackGrid, seed: int) -> List[AttackConfig]:
    """All configs of a grid in declaration order, each with its own derived seed."""
    configs: List[AttackConfig] = []
    for eps in grid.pgd_epsilons:
        configs.append(AttackConfig(kind=AttackKind.PGD, epsilon=eps, steps=grid.pgd_steps,
                                    clip_to_train_range=grid.clip_to_train_range))
    for p in grid.edge_remove_fractions:
        configs.append(AttackConfig(kind=AttackKind.EDGE_REMOVE, fraction=p))
    for p in grid.node_inject_fractions:
        configs.append(AttackConfig(kind=AttackKind.NODE_INJECT, fraction=p,
                                    edges_per_node=grid.edges_per_node))
    return [c.model_copy(update={"seed": derive_seed(seed, c.condition)}) for c in configs]


def load_attack_grid(name_or_path: Union[str, Path]) -> AttackGrid:
    """A preset name from attack_grids.yaml or a path to a YAML grid."""
    path = Path(name_or_path)
    if path.suffix in (".yaml", ".yml") and path.exists():
        return AttackGrid.model_validate(load_yaml(path))
    presets = load_yaml(ATTACK_GRIDS_PATH)
    if str(name_or_path) not in presets:
        raise AttackError(f"Unknown attack grid preset {name_or_path!r}; known: {sorted(presets)}")
    return AttackGrid.model_validate(presets[str(name_or_path)])
