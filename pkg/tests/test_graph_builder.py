from collections import Counter

import numpy as np
import pytest

from conftest import make_flow, make_graph, random_flows
from src.core.errors import GraphError
from src.models.flow import NUMERIC_FEATURES
from src.services.graph_builder import (
    build_graph,
    build_unified_graph,
    merge_graphs,
    sample_subgraph,
    read_graph,
    write_graph,
)
from src.services.standardizer import apply_scaler, fit_scaler

FEATURES = list(NUMERIC_FEATURES)


def _edge_multiset(graph):
    return Counter((graph.nodes[s], graph.nodes[d], fid)
                   for s, d, fid in zip(graph.src, graph.dst, graph.flow_ids))


def test_parallel_edges_are_kept():
    flows = [make_flow(0, "10.0.0.1", "10.0.0.2"), make_flow(1, "10.0.0.1", "10.0.0.2"),
             make_flow(2, "10.0.0.2", "10.0.0.3")]
    graph = build_graph(flows, FEATURES, fit_scaler(flows, FEATURES))
    assert graph.num_nodes == 3
    assert graph.num_edges == 3
    assert graph.nodes == ("10.0.0.1", "10.0.0.2", "10.0.0.3")
    assert list(graph.out_degree()) == [2, 1, 0]
    assert not graph.synthetic.any()


def test_empty_flow_set_gives_empty_graph():
    stats = fit_scaler([make_flow(0)], FEATURES)
    graph = build_graph([], FEATURES, stats)
    assert graph.num_nodes == 0 and graph.num_edges == 0
    assert graph.features.shape == (0, len(FEATURES))


def test_graph_matches_set_union_on_random_flows():
    rng = np.random.default_rng(3)
    for _ in range(50):
        flows = random_flows(rng, int(rng.integers(1, 400)), n_hosts=int(rng.integers(1, 30)))
        stats = fit_scaler(flows, FEATURES)
        graph = build_graph(flows, FEATURES, stats)
        ips = {str(f.src_addr) for f in flows} | {str(f.dst_addr) for f in flows}
        assert set(graph.nodes) == ips
        assert _edge_multiset(graph) == Counter((str(f.src_addr), str(f.dst_addr), f.flow_id) for f in flows)
        assert graph.out_degree().sum() == graph.in_degree().sum() == len(flows)
        np.testing.assert_array_equal(graph.features, apply_scaler(flows, stats))
        assert list(graph.attack) == [f.attack for f in flows]


def test_graph_arrays_are_read_only():
    flows = [make_flow(i) for i in range(3)]
    graph = build_graph(flows, FEATURES, fit_scaler(flows, FEATURES))
    with pytest.raises(ValueError):
        graph.features[0, 0] = 1.0


def test_merge_collapses_shared_addresses():
    a = [make_flow(0, "10.0.0.1", "10.0.0.2", flow_id="a0")]
    b = [make_flow(1, "10.0.0.2", "10.0.0.3", flow_id="b0")]
    stats = fit_scaler(a + b, FEATURES)
    ga, gb = build_graph(a, FEATURES, stats), build_graph(b, FEATURES, stats)
    ab, ba = merge_graphs([ga, gb]), merge_graphs([gb, ga])
    assert ab.num_nodes == 3 and ab.num_edges == 2
    assert set(ab.nodes) == set(ba.nodes)
    assert _edge_multiset(ab) == _edge_multiset(ba)
    assert build_unified_graph([a, b], FEATURES, stats).nodes == ab.nodes


def test_merge_rejects_schema_mismatch():
    flows = [make_flow(0)]
    g1 = build_graph(flows, FEATURES, fit_scaler(flows, FEATURES))
    g2 = build_graph(flows, ["IN_BYTES"], fit_scaler(flows, ["IN_BYTES"]))
    with pytest.raises(GraphError):
        merge_graphs([g1, g2])
    with pytest.raises(GraphError):
        merge_graphs([])


def test_drop_nodes_removes_incident_edges_and_keeps_order():
    flows = [make_flow(0, "10.0.0.1", "10.0.0.2"), make_flow(1, "10.0.0.2", "10.0.0.3"),
             make_flow(2, "10.0.0.1", "10.0.0.3")]
    graph = build_graph(flows, FEATURES, fit_scaler(flows, FEATURES))
    pruned = graph.drop_nodes(["10.0.0.2"])
    assert pruned.nodes == ("10.0.0.1", "10.0.0.3")
    assert pruned.flow_ids == ("f2",)
    assert (pruned.src[0], pruned.dst[0]) == (0, 1)
    assert graph.num_edges == 3


def test_networkx_view_uses_edge_indices():
    flows = [make_flow(i, "10.0.0.1", "10.0.0.2") for i in range(4)]
    graph = build_graph(flows, FEATURES, fit_scaler(flows, FEATURES))
    view = graph.to_networkx()
    assert view.number_of_edges() == 4
    assert sorted(k for _, _, k in view.out_edges(0, keys=True)) == [0, 1, 2, 3]


def test_write_and_read_graph(tmp_path):
    flows = random_flows(np.random.default_rng(0), 60)
    graph = build_graph(flows, FEATURES, fit_scaler(flows, FEATURES))
    back = read_graph(write_graph(graph, tmp_path / "g"))
    assert back.nodes == graph.nodes
    assert back.flow_ids == graph.flow_ids
    np.testing.assert_array_equal(back.features, graph.features)
    np.testing.assert_array_equal(back.src, graph.src)
    np.testing.assert_array_equal(back.attack, graph.attack)
    assert back.feature_names == graph.feature_names


@pytest.mark.parametrize("n_nodes", [1, 37, 100])
def test_sample_subgraph_is_induced(n_nodes):
    flows = random_flows(np.random.default_rng(n_nodes), 1500, n_hosts=120)
    graph = build_graph(flows, FEATURES, fit_scaler(flows, FEATURES))
    sub = sample_subgraph(graph, n_nodes, seed=5)
    assert sub.num_nodes == n_nodes
    chosen = set(sub.nodes)
    assert chosen <= set(graph.nodes)
    expected = Counter((graph.nodes[s], graph.nodes[d], fid)
                       for s, d, fid in zip(graph.src, graph.dst, graph.flow_ids)
                       if graph.nodes[s] in chosen and graph.nodes[d] in chosen)
    assert _edge_multiset(sub) == expected
    assert list(sub.nodes) == [ip for ip in graph.nodes if ip in chosen]
    if n_nodes > 1:
        assert sub.num_edges > 0


def test_sample_subgraph_is_seeded_and_bounded():
    src = np.arange(1500) % 1500
    graph = make_graph(np.zeros((1500, 2)), [0] * 1500, src=src, dst=(src + 1) % 1500, n_nodes=1500)
    a = sample_subgraph(graph, 1000, seed=1)
    assert a.num_nodes == 1000
    assert sample_subgraph(graph, 1000, seed=1).nodes == a.nodes
    assert sample_subgraph(graph, 1000, seed=2).nodes != a.nodes
    assert sample_subgraph(graph, 1500, seed=1).nodes == graph.nodes
    with pytest.raises(GraphError):
        sample_subgraph(graph, 1501, seed=1)
    with pytest.raises(GraphError):
        sample_subgraph(graph, 0, seed=1)
