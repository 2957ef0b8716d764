"""Analyst-driven sanitization of attacked graphs.

Every node of the attacked graph is summarized, scored by an analyst client
and pruned (with all incident edges) when its confidence reaches the
threshold. CF/IF bookkeeping is computed against the injection manifest.
"""
import json
import re
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

import networkx as nx
import numpy as np
from jinja2 import Environment, FileSystemLoader, StrictUndefined

from src.config import settings
from src.core.analyst import AnalystClient
from src.core.errors import GraphError
from src.models.attack import AttackConfig, AttackedGraph
from src.models.detector import DetectorModel, Metrics
from src.models.graph import CommGraph
from src.models.mitigation import (
    AnalystVerdict,
    FeatureDigest,
    MitigationConfig,
    MitigationReport,
    NeighborDigest,
    NodeSummary,
)
from src.services.attacks import SynFloodSynthesizer, inject_nodes
from src.services.detector import evaluate_graph
from src.services.graph_builder import sample_subgraph
from src.utils.logger import logger

PROMPTS_DIR = Path(__file__).resolve().parent.parent / "prompts"

KEY_FEATURE_DESCRIPTIONS: Dict[str, str] = {
    "IN_BYTES": "Incoming bytes",
    "OUT_BYTES": "Outgoing bytes",
    "IN_PKTS": "Incoming packets",
    "OUT_PKTS": "Outgoing packets",
    "FLOW_DURATION_MILLISECONDS": "Duration of the flow (ms)",
    "PROTOCOL": "Network protocol (e.g., 6=TCP, 17=UDP)",
    "L7_PROTO": "Application layer protocol (numeric code)",
    "TCP_FLAGS": "TCP flags set (numeric code)",
}

CONDITIONS = ("clean", "attacked", "fixed")

_env = Environment(loader=FileSystemLoader(str(PROMPTS_DIR)), undefined=StrictUndefined,
                   keep_trailing_newline=False)
_NUMBER_PATTERN = r"[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?"
_NUMBER = re.compile(_NUMBER_PATTERN)
_LABELLED = re.compile(
    r"confidence(?:\s+(?:score|level))?\s*(?:\([^)]*\))?\s*(?:[:=]|is)?\s*\**\s*(?P<value>"
    + _NUMBER_PATTERN + r")",
    re.IGNORECASE,
)
_LEADING = re.compile(r"\s*(?P<value>" + _NUMBER_PATTERN + r")(?![\d.]*\s*(?:/|out of))")
_JSON_OBJECT = re.compile(r"\{.*\}", re.DOTALL)


def _digest(graph: CommGraph, edges: List[int]) -> Optional[FeatureDigest]:
    if not edges:
        return None
    block = graph.raw[edges]
    return FeatureDigest(
        count=len(edges),
        mean={n: float(v) for n, v in zip(graph.raw_names, block.mean(axis=0))},
        max={n: float(v) for n, v in zip(graph.raw_names, block.max(axis=0))},
    )


def summarize_node(graph: Union[AttackedGraph, CommGraph], node: str,
                   max_neighbors: int = 20, view: Optional[nx.MultiDiGraph] = None) -> NodeSummary:
    """Adjacency counts split by provenance, raw-feature digests and the top neighbors by bytes."""
    g = graph.graph if isinstance(graph, AttackedGraph) else graph
    if node not in g.node_index:
        raise GraphError(f"Unknown node {node!r}")
    view = view if view is not None else g.to_networkx()
    i = g.node_index[node]

    in_edges = sorted(key for _, _, key in view.in_edges(i, keys=True))
    out_edges = sorted(key for _, _, key in view.out_edges(i, keys=True))
    syn_in = int(g.synthetic[in_edges].sum()) if in_edges else 0
    syn_out = int(g.synthetic[out_edges].sum()) if out_edges else 0

    groups: Dict[Tuple[str, int], List[int]] = {}
    for e in out_edges:
        groups.setdefault(("to", int(g.dst[e])), []).append(e)
    for e in in_edges:
        groups.setdefault(("from", int(g.src[e])), []).append(e)
    bytes_cols = [g.raw_names.index("IN_BYTES"), g.raw_names.index("OUT_BYTES")]
    neighbors = []
    for (direction, j), edges in groups.items():
        block = g.raw[edges]
        neighbors.append(NeighborDigest(
            address=g.nodes[j],
            direction=direction,
            flows=len(edges),
            bytes=float(block[:, bytes_cols].sum()),
            mean={n: float(v) for n, v in zip(g.raw_names, block.mean(axis=0))},
        ))
    neighbors.sort(key=lambda n: (-n.bytes, n.address, n.direction))

    return NodeSummary(
        node=node,
        num_total_nodes=g.num_nodes,
        original_in=len(in_edges) - syn_in,
        original_out=len(out_edges) - syn_out,
        synthetic_in=syn_in,
        synthetic_out=syn_out,
        in_digest=_digest(g, in_edges),
        out_digest=_digest(g, out_edges),
        neighbors=neighbors[:max_neighbors],
        neighbors_truncated=max(0, len(neighbors) - max_neighbors),
    )


def render_prompts(summary: NodeSummary) -> Tuple[str, str]:
    system = _env.get_template("analyst_system.jinja2").render(
        num_total_nodes=summary.num_total_nodes, key_features=KEY_FEATURE_DESCRIPTIONS)
    user = _env.get_template("analyst_user.jinja2").render(
        s=summary, key_features=list(KEY_FEATURE_DESCRIPTIONS))
    return system, user


def parse_confidence(reply: str) -> Tuple[Optional[float], str]:
    """Confidence from a reply; None if absent or out of [0, 1].

    Lookup order: a JSON object with a ``confidence`` key, a labelled
    ``confidence: x`` (an echoed scale in parentheses is skipped), a number
    opening the reply, then the last in-range number in the text.
    """
    text = (reply or "").strip()
    m = _JSON_OBJECT.search(text)
    if m:
        try:
            data = json.loads(m.group(0))
        except json.JSONDecodeError:
            data = None
        if isinstance(data, dict) and "confidence" in data:
            try:
                value = float(data["confidence"])
            except (TypeError, ValueError):
                return None, text
            rationale = str(data.get("rationale", data.get("justification", "")))
            return (value, rationale) if 0.0 <= value <= 1.0 else (None, rationale)

    m = _LABELLED.search(text) or _LEADING.match(text)
    if m:
        value = float(m.group("value"))
        if not 0.0 <= value <= 1.0:
            return None, text
        return value, text[m.end():].strip(" -:—–.\n")

    in_range = [n for n in _NUMBER.finditer(text) if 0.0 <= float(n.group(0)) <= 1.0]
    if not in_range:
        return None, text
    return float(in_range[-1].group(0)), text


def query_analyst(summary: NodeSummary, client: AnalystClient,
                  parse_retries: Optional[int] = None) -> AnalystVerdict:
    """Ask the analyst about one node; unparseable replies are retried, then left unanalyzed."""
    retries = settings.ANALYST_PARSE_RETRIES if parse_retries is None else parse_retries
    system, user = render_prompts(summary)
    reply = ""
    for attempt in range(1, retries + 2):
        reply = client.complete(summary, system, user)
        confidence, rationale = parse_confidence(reply)
        if confidence is not None:
            return AnalystVerdict(node=summary.node, confidence=confidence,
                                  rationale=rationale, attempts=attempt)
        logger.debug(f"Unparseable analyst reply for {summary.node} (attempt {attempt}): {reply!r}")
    logger.warning(f"Node {summary.node} left unanalyzed after {retries + 1} attempts")
    return AnalystVerdict(node=summary.node, confidence=None, rationale=reply, attempts=retries + 1)


def analyze_graph(graph: Union[AttackedGraph, CommGraph], client: AnalystClient,
                  max_neighbors: int = 20, max_workers: Optional[int] = None,
                  nodes: Optional[Iterable[str]] = None) -> Dict[str, AnalystVerdict]:
    g = graph.graph if isinstance(graph, AttackedGraph) else graph
    view = g.to_networkx()
    targets = list(g.nodes if nodes is None else nodes)

    def _one(node: str) -> AnalystVerdict:
        return query_analyst(summarize_node(g, node, max_neighbors, view), client)

    workers = max_workers or settings.MAX_CONCURRENCY
    with ThreadPoolExecutor(max_workers=workers) as pool:
        verdicts = list(pool.map(_one, targets))
    logger.info(f"Analyst {client.name} scored {len(verdicts)} nodes")
    return {v.node: v for v in verdicts}


def prune_flagged(attacked: AttackedGraph, verdicts: Dict[str, AnalystVerdict],
                  threshold: float) -> Tuple[CommGraph, MitigationReport]:
    g = attacked.graph
    flagged = sorted(n for n, v in verdicts.items() if v.flags(threshold) and n in g.node_index)
    injected = set(attacked.manifest.injected_nodes)
    cf = sum(1 for n in flagged if n in injected)
    fixed = g.drop_nodes(flagged)
    report = MitigationReport(
        condition=attacked.manifest.config.condition,
        nodes_before=g.num_nodes,
        nodes_after=fixed.num_nodes,
        injected_count=len(injected),
        flagged=flagged,
        unanalyzed=sorted(n for n, v in verdicts.items() if not v.analyzed),
        correctly_flagged=cf,
        incorrectly_flagged=len(flagged) - cf,
        threshold=threshold,
    )
    logger.info(f"Pruned {len(flagged)} nodes (CF={cf}, IF={len(flagged) - cf}); "
                f"{report.nodes_before} -> {report.nodes_after}")
    return fixed, report


def metric_deltas(base: Metrics, other: Metrics) -> Dict[str, float]:
    b, o = base.scalars(), other.scalars()
    return {k: float(o[k] - b[k]) for k in b}


def evaluate_conditions(clean: CommGraph, attacked: Union[AttackedGraph, CommGraph],
                        fixed: CommGraph, model: DetectorModel,
                        original_edges_only: bool = False) -> Tuple[Dict[str, Metrics], Dict[str, Dict[str, float]]]:
    """Metrics on the clean, attacked and fixed graphs plus deltas against clean."""
    a = attacked.graph if isinstance(attacked, AttackedGraph) else attacked
    metrics = {
        "clean": evaluate_graph(model, clean),
        "attacked": evaluate_graph(model, a, a.edge_mask_original() if original_edges_only else None),
        "fixed": evaluate_graph(model, fixed),
    }
    deltas = {
        "attacked": metric_deltas(metrics["clean"], metrics["attacked"]),
        "fixed": metric_deltas(metrics["clean"], metrics["fixed"]),
    }
    return metrics, deltas


def sampled_injection(clean: CommGraph, attack: AttackConfig, flow_synth: SynFloodSynthesizer,
                      n_nodes: int, seed: int) -> Tuple[CommGraph, AttackedGraph]:
    """Node subgraph of the clean graph with a fresh NodeInject attack on it."""
    sub = sample_subgraph(clean, n_nodes, seed)
    return sub, inject_nodes(sub, attack, flow_synth)


def mitigate(clean: CommGraph, attacked: AttackedGraph, model: DetectorModel,
             client: AnalystClient, cfg: Optional[MitigationConfig] = None) -> Tuple[CommGraph, MitigationReport]:
    """Full loop: analyze, prune, evaluate the three conditions."""
    cfg = cfg or MitigationConfig()
    verdicts = analyze_graph(attacked, client, cfg.max_neighbors, cfg.max_workers)
    fixed, report = prune_flagged(attacked, verdicts, cfg.threshold)
    metrics, deltas = evaluate_conditions(clean, attacked, fixed, model)
    return fixed, report.model_copy(update={"metrics": metrics, "deltas": deltas})


def save_report(report: MitigationReport, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.model_dump_json(indent=2), encoding="utf-8")
    return path
