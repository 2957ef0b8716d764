from types import SimpleNamespace

import numpy as np
import openai
import pytest
import tiktoken
from pydantic import ValidationError

from conftest import make_flow, make_graph
from src.core.analyst import AnalystClient
from src.config import settings
from src.core.errors import AnalystError, AnalystTransportError, GraphError
from src.models.attack import AttackConfig, AttackedGraph, AttackKind, AttackManifest
from src.models.detector import DetectorConfig
from src.models.flow import NUMERIC_FEATURES
from src.models.mitigation import AnalystVerdict, MitigationConfig, MitigationReport
from src.providers import get_analyst
from src.providers.heuristic import HeuristicAnalyst
from src.providers.openai_analyst import OpenAIAnalyst
from src.services.attacks import SynFloodSynthesizer, inject_nodes
from src.services.detector import evaluate_graph, train
from src.services.graph_builder import build_graph
from src.services.mitigation import (
    KEY_FEATURE_DESCRIPTIONS,
    analyze_graph,
    evaluate_conditions,
    mitigate,
    parse_confidence,
    prune_flagged,
    query_analyst,
    render_prompts,
    sampled_injection,
    summarize_node,
)
from src.services.standardizer import fit_scaler
from src.utils.tokens import TokenBudget

FEATURES = list(NUMERIC_FEATURES)


class ScriptedAnalyst(AnalystClient):
    name = "scripted"

    def __init__(self, replies):
        self.replies = list(replies)
        self.calls = 0

    def complete(self, summary, system_prompt, user_prompt):
        self.calls += 1
        return self.replies[min(self.calls, len(self.replies)) - 1]


class DownAnalyst(AnalystClient):
    name = "down"

    def complete(self, summary, system_prompt, user_prompt):
        raise AnalystTransportError("endpoint unreachable")


def _victim_graph():
    """V receives one original edge and three synthetic edges; 9.9.9.9 is isolated."""
    clean = make_graph(np.zeros((1, 2)), [0], src=[0], dst=[1], n_nodes=3)
    v = clean.nodes[1]
    attacked = clean.add(
        nodes=["100.64.0.1", "100.64.0.2", "100.64.0.3"],
        src=[3, 4, 5], dst=[1, 1, 1],
        features=np.zeros((3, 2)), raw=np.ones((3, 8)),
        flow_ids=["i0", "i1", "i2"], labels=["DoS"] * 3, sources=["injected"] * 3,
    )
    return clean, attacked, v


def test_summary_counts_by_provenance():
    _, g, v = _victim_graph()
    s = summarize_node(g, v)
    assert (s.original_in, s.synthetic_in, s.original_out, s.synthetic_out) == (1, 3, 0, 0)
    assert s.in_edges == 4 and s.total_edges == 4
    assert s.num_total_nodes == 6
    assert s.in_digest.count == 4
    assert len(s.neighbors) == 4
    assert summarize_node(g, "100.64.0.1").synthetic_out == 1


def test_summary_of_isolated_node_is_empty():
    _, g, _ = _victim_graph()
    isolated = g.nodes[2]
    s = summarize_node(g, isolated)
    assert s.total_edges == 0
    assert s.in_digest is None and s.out_digest is None
    assert s.neighbors == []
    with pytest.raises(GraphError):
        summarize_node(g, "1.2.3.4")


def test_summary_truncates_neighbors():
    _, g, v = _victim_graph()
    s = summarize_node(g, v, max_neighbors=2)
    assert len(s.neighbors) == 2
    assert s.neighbors_truncated == 2


def test_prompts_carry_node_context_and_key_features():
    _, g, v = _victim_graph()
    system, user = render_prompts(summarize_node(g, v))
    assert "6" in system
    for name, desc in KEY_FEATURE_DESCRIPTIONS.items():
        assert name in system and desc in system
    assert v in user
    assert "confidence" in system


def test_parse_confidence_formats():
    assert parse_confidence("0.85 — high synthetic inflow") == (0.85, "high synthetic inflow")
    assert parse_confidence('{"confidence": 0.3, "rationale": "few flows"}') == (0.3, "few flows")
    assert parse_confidence("Confidence: 1")[0] == 1.0
    assert parse_confidence("The confidence is 0.7 given the flood")[0] == 0.7
    assert parse_confidence("no idea")[0] is None
    assert parse_confidence("7 out of 10")[0] is None
    assert parse_confidence("Confidence: 7/10")[0] is None


def test_parse_confidence_skips_echoed_scale_and_node_numbers():
    assert parse_confidence("Confidence (0.0-1.0): 0.85")[0] == 0.85
    assert parse_confidence("Confidence score (0.0 = normal, 1.0 = anomalous): 0.15")[0] == 0.15
    assert parse_confidence("Node 1 receives 40 SYN floods.\nConfidence: 0.2")[0] == 0.2
    assert parse_confidence("Step 1: compare neighbors. Step 2: all 12 flows match, so 0.1")[0] == 0.1


def test_heuristic_analyst_scores():
    _, g, v = _victim_graph()
    client = HeuristicAnalyst()
    attacker = summarize_node(g, "100.64.0.2")
    assert (attacker.in_edges, attacker.synthetic_out) == (0, 1)
    assert query_analyst(attacker, client).confidence == 1.0
    # victim: 1 original + 3 synthetic inbound flows
    assert query_analyst(summarize_node(g, v), client).confidence == 0.75
    assert query_analyst(summarize_node(g, g.nodes[0]), client).confidence == 0.0
    assert query_analyst(summarize_node(g, g.nodes[2]), client).confidence == 0.0
    assert isinstance(get_analyst("heuristic"), HeuristicAnalyst)


def test_unparseable_replies_are_retried_then_left_unanalyzed():
    _, g, v = _victim_graph()
    s = summarize_node(g, v)
    verdict = query_analyst(s, ScriptedAnalyst(["hmm", "what?", "0.7"]), parse_retries=2)
    assert verdict.confidence == 0.7 and verdict.attempts == 3

    client = ScriptedAnalyst(["garbage"])
    verdict = query_analyst(s, client, parse_retries=2)
    assert client.calls == 3
    assert not verdict.analyzed
    assert not verdict.flags(0.0)


def test_transport_errors_surface():
    _, g, v = _victim_graph()
    with pytest.raises(AnalystTransportError):
        query_analyst(summarize_node(g, v), DownAnalyst())


def _table_fixture():
    clean = make_graph(np.zeros((100, 2)), [0, 1] * 50, src=np.arange(100), dst=(np.arange(100) + 1) % 100,
                       n_nodes=100)
    injected = [f"100.64.0.{i + 1}" for i in range(20)]
    attacked_graph = clean.add(
        nodes=injected, src=list(range(100, 120)), dst=list(range(20)),
        features=np.zeros((20, 2)), raw=np.zeros((20, 8)),
        flow_ids=[f"inj-{i}-0" for i in range(20)], labels=["DoS"] * 20, sources=["injected"] * 20,
    )
    manifest = AttackManifest(config=AttackConfig(kind=AttackKind.NODE_INJECT, fraction=0.2),
                              injected_nodes=injected)
    return clean, AttackedGraph(graph=attacked_graph, manifest=manifest), injected


def test_prune_bookkeeping():
    clean, attacked, injected = _table_fixture()
    verdicts = {n: AnalystVerdict(node=n, confidence=0.9) for n in injected}
    verdicts.update({n: AnalystVerdict(node=n, confidence=0.9) for n in clean.nodes[:14]})
    verdicts.update({n: AnalystVerdict(node=n, confidence=0.1) for n in clean.nodes[14:]})
    fixed, report = prune_flagged(attacked, verdicts, threshold=0.6)
    assert report.nodes_before == 120
    assert report.nodes_after == fixed.num_nodes == 86
    assert report.correctly_flagged == 20
    assert report.incorrectly_flagged == 14
    assert report.mitigation_recall == 1.0
    survivors = set(fixed.nodes)
    g = attacked.graph
    expected = [fid for fid, s, d in zip(g.flow_ids, g.src, g.dst)
                if g.nodes[s] in survivors and g.nodes[d] in survivors]
    assert list(fixed.flow_ids) == expected


def test_prune_without_flags_is_identity():
    _, attacked, _ = _table_fixture()
    verdicts = {n: AnalystVerdict(node=n, confidence=0.2) for n in attacked.graph.nodes}
    fixed, report = prune_flagged(attacked, verdicts, threshold=0.6)
    assert fixed.nodes == attacked.graph.nodes
    assert report.flagged == [] and report.mitigation_recall == 0.0


def test_report_rejects_inconsistent_counts():
    with pytest.raises(ValidationError):
        MitigationReport(nodes_before=10, nodes_after=9, injected_count=2, flagged=["a", "b"],
                         correctly_flagged=1, incorrectly_flagged=1, threshold=0.5)


def test_heuristic_removes_injected_nodes_with_synthetic_only_edges():
    clean, attacked, injected = _table_fixture()
    verdicts = analyze_graph(attacked, HeuristicAnalyst(), max_workers=2)
    assert all(verdicts[n].confidence == 1.0 for n in injected)
    fixed, report = prune_flagged(attacked, verdicts, threshold=0.6)
    assert report.correctly_flagged == 20 and report.incorrectly_flagged == 0
    assert fixed.nodes == clean.nodes
    assert fixed.flow_ids == clean.flow_ids


def _dense_clean(seed):
    """50 hosts, every host with plenty of original traffic."""
    rng = np.random.default_rng(seed)
    hosts = [f"10.2.0.{i + 1}" for i in range(50)]
    flows = []
    for i in range(1500):
        a, b = rng.choice(50, size=2, replace=False)
        attack = int(rng.uniform() < 0.3)
        flows.append(make_flow(i, hosts[a], hosts[b], attack=attack,
                               IN_BYTES=int(rng.integers(20000, 60000) if attack else rng.integers(100, 5000)),
                               IN_PKTS=int(rng.integers(200, 600) if attack else rng.integers(1, 20))))
    return flows


def test_mitigation_restores_clean_metrics():
    flows = _dense_clean(0)
    stats = fit_scaler(flows, FEATURES)
    clean = build_graph(flows, FEATURES, stats)
    model = train(clean, seed=0, config=DetectorConfig(epochs=40))
    attacked = inject_nodes(clean, AttackConfig(kind=AttackKind.NODE_INJECT, fraction=0.2, seed=1),
                            SynFloodSynthesizer(stats))
    fixed, report = mitigate(clean, attacked, model, HeuristicAnalyst(),
                             MitigationConfig(threshold=0.5, max_workers=2))
    assert report.correctly_flagged == 10
    assert report.incorrectly_flagged == 0
    assert report.nodes_after == clean.num_nodes
    for name, value in report.metrics["clean"].scalars().items():
        assert report.metrics["fixed"].scalars()[name] == pytest.approx(value, abs=1e-12)
    assert all(abs(d) <= 1e-12 for d in report.deltas["fixed"].values())


def test_evaluate_conditions_on_original_edges():
    flows = _dense_clean(3)[:400]
    stats = fit_scaler(flows, FEATURES)
    clean = build_graph(flows, FEATURES, stats)
    model = train(clean, seed=0, config=DetectorConfig(epochs=20))
    attacked = inject_nodes(clean, AttackConfig(kind=AttackKind.NODE_INJECT, fraction=0.1, seed=2),
                            SynFloodSynthesizer(stats))
    metrics, deltas = evaluate_conditions(clean, attacked, clean, model, original_edges_only=True)
    assert set(metrics) == {"clean", "attacked", "fixed"}
    reference = evaluate_graph(model, clean).scalars()
    for name, value in metrics["attacked"].scalars().items():
        assert value == pytest.approx(reference[name], abs=1e-12)
    assert set(deltas) == {"attacked", "fixed"}


def test_remote_analyst_requires_api_key(monkeypatch):
    monkeypatch.setattr(settings, "ANALYST_API_KEY", None)
    with pytest.raises(AnalystError):
        get_analyst("openai")
    with pytest.raises(AnalystError):
        get_analyst("nobody")


@pytest.mark.parametrize("preset,injected", [("small", 20), ("large", 200)])
def test_sampled_injection_counts(preset, injected):
    n = 1500
    src = np.arange(2 * n) % n
    clean = make_graph(np.random.default_rng(0).normal(size=(2 * n, 2)), [i % 2 for i in range(2 * n)],
                       src=src, dst=(src * 7 + 1) % n, n_nodes=n,
                       feature_names=("IN_BYTES", "IN_PKTS"))
    stats = fit_scaler([make_flow(0), make_flow(1)], ["IN_BYTES", "IN_PKTS"])
    cfg = MitigationConfig(sample_nodes=preset)
    sub, attacked = sampled_injection(clean, AttackConfig(kind=AttackKind.NODE_INJECT, fraction=0.2, seed=3),
                                      SynFloodSynthesizer(stats), cfg.sample_nodes, seed=11)
    assert sub.num_nodes == cfg.sample_nodes
    assert len(attacked.manifest.injected_nodes) == injected
    assert attacked.graph.num_nodes == cfg.sample_nodes + injected
    assert set(attacked.graph.nodes[: sub.num_nodes]) == set(sub.nodes)

    _, report = mitigate(sub, attacked, train(sub, seed=0, config=DetectorConfig(epochs=5)),
                         HeuristicAnalyst(), cfg)
    assert report.injected_count == injected
    assert report.nodes_before == cfg.sample_nodes + injected
    assert report.correctly_flagged == injected


def test_sample_presets_resolve():
    assert MitigationConfig(sample_nodes="small").sample_nodes == 100
    assert MitigationConfig(sample_nodes="large").sample_nodes == 1000
    assert MitigationConfig(sample_nodes=250).sample_nodes == 250
    assert MitigationConfig().sample_nodes is None
    with pytest.raises(ValidationError):
        MitigationConfig(sample_nodes="huge")


class _WordEncoding:
    """One token per whitespace-separated word."""

    def encode(self, text):
        return text.split()


class _FakeCompletions:
    def __init__(self, outcome):
        self.outcome = outcome
        self.calls = []

    def create(self, **kwargs):
        self.calls.append(kwargs)
        if isinstance(self.outcome, Exception):
            raise self.outcome
        return SimpleNamespace(choices=[SimpleNamespace(message=SimpleNamespace(content=self.outcome))])


def _remote_analyst(monkeypatch, outcome):
    monkeypatch.setattr(tiktoken, "encoding_for_model", lambda name: _WordEncoding())
    monkeypatch.setattr(settings, "ANALYST_MAX_PROMPT_TOKENS", 6000)
    analyst = OpenAIAnalyst(model="gpt-4o", api_key="sk-test")
    completions = _FakeCompletions(outcome)
    analyst.client = SimpleNamespace(chat=SimpleNamespace(completions=completions))
    return analyst, completions


def test_remote_analyst_sends_both_prompts(monkeypatch):
    analyst, completions = _remote_analyst(monkeypatch, '{"confidence": 0.9, "rationale": "flood"}')
    _, g, v = _victim_graph()
    verdict = query_analyst(summarize_node(g, v), analyst)
    assert verdict.confidence == 0.9
    (call,) = completions.calls
    assert [m["role"] for m in call["messages"]] == ["system", "user"]
    assert call["model"] == "gpt-4o"


def test_remote_analyst_wraps_sdk_errors(monkeypatch):
    analyst, _ = _remote_analyst(monkeypatch, openai.OpenAIError("invalid api key"))
    _, g, v = _victim_graph()
    with pytest.raises(AnalystTransportError, match="invalid api key"):
        query_analyst(summarize_node(g, v), analyst)


def test_token_budget_trims_user_prompt_from_the_end(monkeypatch):
    monkeypatch.setattr(tiktoken, "encoding_for_model", lambda name: _WordEncoding())
    budget = TokenBudget(max_tokens=10)
    system = "a b c d"
    user = "one two\nthree four\nfive six\nseven"
    assert budget.fit(system, "short prompt") == "short prompt"
    trimmed = budget.fit(system, user)
    assert trimmed == "one two\nthree four\nfive six"
    assert budget.count_tokens(system) + budget.count_tokens(trimmed) <= 10
    assert budget.fit("w " * 10, user) == ""


def test_token_budget_falls_back_for_unknown_models(monkeypatch):
    def unknown(name):
        raise KeyError(name)

    monkeypatch.setattr(tiktoken, "encoding_for_model", unknown)
    monkeypatch.setattr(tiktoken, "get_encoding", lambda name: _WordEncoding())
    assert TokenBudget(model_name="local-llama").count_tokens("x y z") == 3
