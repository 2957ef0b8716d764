"""Adaptive stratified sampling.

Each class c gets a retention rate r_c from its share of the dataset:
rare classes are boosted, common ones kept at the base rate, and any class
smaller than n_min is kept whole. Exactly round(N_c * r_c) rows are drawn
per class. Selection ranks rows by a key hashed from (seed, flow_id) and
keeps the smallest keys, which makes the result independent of chunking.
"""
import hashlib
import heapq
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple, Union

import pandas as pd

from src.core.errors import SamplingError
from src.core.schema import round_half_up
from src.models.flow import FlowRecord
from src.models.sampling import ClassRate, SamplingConfig, SamplingPlan
from src.services.standardizer import frame_to_records, write_flows
from src.utils.logger import logger

Histogram = Tuple[Dict[str, int], int]


def class_histogram(rows: Iterable[FlowRecord]) -> Histogram:
    counts = Counter(r.label for r in rows)
    return dict(counts), sum(counts.values())


def merge_histograms(parts: Iterable[Histogram]) -> Histogram:
    total: Counter = Counter()
    for counts, _ in parts:
        total.update(counts)
    return dict(total), sum(total.values())


def _rate(n_c: int, n_total: int, cfg: SamplingConfig) -> Tuple[float, str]:
    theta_rare = cfg.p_rare * n_total
    theta_uncommon = cfg.p_uncommon * n_total
    if n_c < theta_rare:
        rate, branch = max(cfg.r_high, cfg.r_base * cfg.m_rare), "rare"
    elif n_c < theta_uncommon:
        rate, branch = min(1.0, cfg.r_base * cfg.m_uncommon), "uncommon"
    else:
        rate, branch = cfg.r_base * cfg.m_common, "common"
    if n_c < cfg.n_min:
        rate, branch = 1.0, "n_min"
    return min(1.0, rate), branch


def compute_rates(hist: Union[Histogram, Mapping[str, int]], cfg: SamplingConfig) -> SamplingPlan:
    if isinstance(hist, tuple):
        counts, n_total = hist
    else:
        counts, n_total = dict(hist), sum(hist.values())
    if n_total != sum(counts.values()):
        raise SamplingError("Histogram total does not match class counts")

    classes = []
    for label in sorted(counts):
        n_c = counts[label]
        rate, branch = _rate(n_c, n_total, cfg)
        classes.append(ClassRate(
            label=label,
            n_c=n_c,
            rate=rate,
            expected_count=n_c * rate,
            selected_count=min(n_c, round_half_up(n_c * rate)),
            branch=branch,
        ))
    plan = SamplingPlan(
        classes=classes,
        n_total=n_total,
        expected_total=sum(c.expected_count for c in classes),
        selected_total=sum(c.selected_count for c in classes),
        theta_rare=cfg.p_rare * n_total,
        theta_uncommon=cfg.p_uncommon * n_total,
        config=cfg,
    )
    logger.info(f"Sampling plan: {n_total} -> {plan.selected_total} rows over {len(classes)} classes")
    return plan


def selection_key(seed: int, flow_id: str) -> int:
    digest = hashlib.blake2b(f"{seed}:{flow_id}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


class ClassReservoir:
    """Keeps the k smallest-key rows of one class."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._heap: List[Tuple[int, str, FlowRecord]] = []  # (-key, negated id order, row)

    def offer(self, key: int, record: FlowRecord) -> None:
        if self.capacity == 0:
            return
        item = (-key, _neg_id(record.flow_id), record)
        if len(self._heap) < self.capacity:
            heapq.heappush(self._heap, item)
        elif item[:2] > self._heap[0][:2]:
            heapq.heapreplace(self._heap, item)

    def merge(self, other: "ClassReservoir") -> "ClassReservoir":
        for neg_key, _, record in other._heap:
            self.offer(-neg_key, record)
        return self

    def rows(self) -> List[FlowRecord]:
        return [r for _, _, r in sorted(self._heap, key=lambda t: (-t[0], t[2].flow_id))]


def _neg_id(flow_id: str) -> Tuple[int, ...]:
    # larger tuple == smaller flow_id, so ties keep the smaller id
    return tuple(-ord(ch) for ch in flow_id) + (1,)


def _select_chunk(rows: Sequence[FlowRecord], plan: SamplingPlan, seed: int) -> Dict[str, ClassReservoir]:
    by_label = plan.by_label()
    reservoirs: Dict[str, ClassReservoir] = {}
    for r in rows:
        entry = by_label.get(r.label)
        if entry is None:
            raise SamplingError(f"Class {r.label!r} not covered by the sampling plan")
        res = reservoirs.get(r.label)
        if res is None:
            res = reservoirs[r.label] = ClassReservoir(entry.selected_count)
        res.offer(selection_key(seed, r.flow_id), r)
    return reservoirs


def stratified_sample(rows: Union[Sequence[FlowRecord], Iterable[Sequence[FlowRecord]]],
                      plan: SamplingPlan, seed: int, chunked: bool = False,
                      max_workers: int = 1) -> List[FlowRecord]:
    """Select exactly round(N_c * r_c) rows per class.

    With chunked=True, `rows` is an iterable of chunks; chunks may be
    processed concurrently and the merged result is the same multiset.
    """
    chunks = rows if chunked else [rows]
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            parts = list(pool.map(lambda c: _select_chunk(c, plan, seed), chunks))
    else:
        parts = [_select_chunk(c, plan, seed) for c in chunks]

    merged: Dict[str, ClassReservoir] = {}
    for part in parts:
        for label, res in part.items():
            if label in merged:
                merged[label].merge(res)
            else:
                merged[label] = res

    selected: List[FlowRecord] = []
    for entry in plan.classes:
        res = merged.get(entry.label)
        if res is not None:
            selected.extend(res.rows())
    return selected


def sample_csv(in_path: Union[str, Path], out_path: Union[str, Path], cfg: SamplingConfig,
               seed: int, chunk_size: int = 50_000) -> SamplingPlan:
    """Two streaming passes over a unified CSV: histogram, then selection."""
    parts = []
    for chunk in pd.read_csv(in_path, usecols=["Label"], dtype={"Label": str}, chunksize=chunk_size):
        counts = chunk["Label"].value_counts().to_dict()
        parts.append(({str(k): int(v) for k, v in counts.items()}, len(chunk)))
    plan = compute_rates(merge_histograms(parts), cfg)

    reader = pd.read_csv(in_path, dtype={"IPV4_SRC_ADDR": str, "IPV4_DST_ADDR": str,
                                         "flow_id": str, "dataset_source": str, "Label": str},
                         chunksize=chunk_size)
    selected = stratified_sample((frame_to_records(c) for c in reader), plan, seed, chunked=True)
    write_flows(selected, out_path)
    logger.info(f"Wrote {len(selected)} sampled flows to {out_path}")
    return plan
