from collections import Counter

import numpy as np
import pytest

from conftest import make_flow
from src.core.errors import SamplingError
from src.core.schema import round_half_up
from src.models.sampling import SamplingConfig
from src.services.sampler import (
    class_histogram,
    compute_rates,
    merge_histograms,
    sample_csv,
    stratified_sample,
)
from src.services.standardizer import read_flows, write_flows


def _expected_rate(n_c, n_total, cfg):
    if n_c < cfg.n_min:
        return 1.0
    if n_c < cfg.p_rare * n_total:
        return min(1.0, max(cfg.r_high, cfg.r_base * cfg.m_rare))
    if n_c < cfg.p_uncommon * n_total:
        return min(1.0, cfg.r_base * cfg.m_uncommon)
    return min(1.0, cfg.r_base * cfg.m_common)


def _random_config(rng):
    p_rare = rng.uniform(0.0001, 0.05)
    return SamplingConfig(
        r_base=rng.uniform(0.01, 1.0),
        p_rare=p_rare,
        p_uncommon=min(1.0, p_rare + rng.uniform(0.001, 0.2)),
        m_rare=rng.uniform(0.5, 20),
        m_uncommon=rng.uniform(0.5, 20),
        m_common=rng.uniform(0.5, 2),
        r_high=rng.uniform(0.05, 1.0),
        n_min=int(rng.integers(0, 2000)),
    )


def _labelled_flows(counts):
    flows, i = [], 0
    for label, n in counts.items():
        for _ in range(n):
            attack = int(label != "Benign")
            flows.append(make_flow(i, attack=attack, label=label))
            i += 1
    return flows


def test_histogram_counts_and_merge():
    flows = _labelled_flows({"Benign": 3, "DoS": 1})
    assert class_histogram(flows) == ({"Benign": 3, "DoS": 1}, 4)
    assert class_histogram([]) == ({}, 0)
    merged = merge_histograms([({"Benign": 3}, 3), ({"Benign": 1, "DoS": 2}, 3)])
    assert merged == ({"Benign": 4, "DoS": 2}, 6)


def test_rates_for_uncommon_and_common_classes():
    cfg = SamplingConfig(r_base=0.05, p_rare=0.01, p_uncommon=0.1, m_uncommon=5, n_min=1000)
    plan = compute_rates({"A": 1500, "B": 50_000, "C": 48_500}, cfg)
    rates = plan.by_label()
    assert rates["A"].rate == pytest.approx(0.25)
    assert rates["A"].branch == "uncommon"
    assert rates["B"].rate == pytest.approx(0.05)
    assert rates["B"].selected_count == 2500
    assert plan.theta_uncommon == pytest.approx(10_000)


def test_small_class_kept_whole():
    cfg = SamplingConfig(n_min=1000)
    plan = compute_rates({"Benign": 100_000, "Theft": 800}, cfg)
    assert plan.rate_for("Theft") == 1.0
    assert plan.by_label()["Theft"].selected_count == 800


def test_rate_law_on_random_histograms():
    rng = np.random.default_rng(42)
    for _ in range(1000):
        cfg = _random_config(rng)
        counts = {f"c{j}": int(rng.integers(1, 5000)) for j in range(int(rng.integers(1, 7)))}
        n_total = sum(counts.values())
        plan = compute_rates(counts, cfg)
        for entry in plan.classes:
            expected = _expected_rate(entry.n_c, n_total, cfg)
            assert entry.rate == pytest.approx(expected, abs=1e-12)
            assert 0 < entry.rate <= 1
            assert entry.selected_count == round_half_up(entry.n_c * entry.rate)
            if entry.n_c < cfg.p_rare * n_total and entry.n_c >= cfg.n_min:
                assert entry.rate >= cfg.r_high


def test_sample_counts_exact_on_random_inputs():
    rng = np.random.default_rng(7)
    for case in range(100):
        cfg = _random_config(rng).model_copy(update={"n_min": int(rng.integers(0, 50))})
        counts = {"Benign": int(rng.integers(1, 300)), "DoS": int(rng.integers(1, 80)),
                  "Theft": int(rng.integers(1, 10))}
        flows = _labelled_flows(counts)
        plan = compute_rates(class_histogram(flows), cfg)
        picked = stratified_sample(flows, plan, seed=case)
        got = Counter(f.label for f in picked)
        for entry in plan.classes:
            assert got[entry.label] == entry.selected_count
        assert len({f.flow_id for f in picked}) == len(picked)


def test_classes_below_n_min_survive_whole_on_random_datasets():
    rng = np.random.default_rng(19)
    for case in range(100):
        n_min = int(rng.integers(5, 60))
        cfg = _random_config(rng).model_copy(update={"n_min": n_min})
        counts = {"Benign": int(rng.integers(200, 600)), "DoS": int(rng.integers(1, 120)),
                  "Theft": int(rng.integers(1, n_min + 1)), "Recon": int(rng.integers(1, 40))}
        flows = _labelled_flows(counts)
        picked = stratified_sample(flows, compute_rates(class_histogram(flows), cfg), seed=case)
        kept = Counter(f.label for f in picked)
        for label, n in counts.items():
            if n < n_min:
                assert kept[label] == n


def test_sample_is_chunk_and_worker_invariant():
    flows = _labelled_flows({"Benign": 700, "DoS": 90, "Theft": 5})
    plan = compute_rates(class_histogram(flows), SamplingConfig(r_base=0.1, n_min=50))
    whole = stratified_sample(flows, plan, seed=11)
    chunks = [flows[i:i + 37] for i in range(0, len(flows), 37)]
    chunked = stratified_sample(chunks, plan, seed=11, chunked=True, max_workers=4)
    assert sorted(f.flow_id for f in chunked) == sorted(f.flow_id for f in whole)
    assert stratified_sample(flows, plan, seed=11) == whole
    assert stratified_sample(flows, plan, seed=12) != whole


def test_unplanned_class_fails():
    flows = _labelled_flows({"Benign": 10})
    plan = compute_rates({"Benign": 10}, SamplingConfig())
    with pytest.raises(SamplingError):
        stratified_sample(flows + [make_flow(99, attack=1, label="DoS")], plan, seed=0)


def test_sample_csv_streams_two_passes(tmp_path):
    flows = _labelled_flows({"Benign": 400, "DoS": 30})
    src = write_flows(flows, tmp_path / "in.csv")
    cfg = SamplingConfig(r_base=0.25, n_min=100)
    plan = sample_csv(src, tmp_path / "out.csv", cfg, seed=5, chunk_size=64)
    out = read_flows(tmp_path / "out.csv")
    assert plan.n_total == 430
    assert Counter(f.label for f in out) == {"Benign": 100, "DoS": 30}
    expected = stratified_sample(flows, compute_rates(class_histogram(flows), cfg), seed=5)
    assert sorted(f.flow_id for f in out) == sorted(f.flow_id for f in expected)
