"""Four-step robustness protocol: baseline, drift, attacks, mitigation."""
import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from itertools import permutations
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd

from src.config import settings
from src.core.errors import BenchError
from src.core.schema import PRESETS_DIR, load_mapping, load_yaml
from src.models.attack import AttackedGraph, AttackGrid, AttackKind
from src.models.detector import DetectorModel
from src.models.flow import FlowRecord, ScalerStats
from src.models.graph import CommGraph
from src.models.report import (
    ConditionResult,
    DatasetInput,
    ManifestRef,
    Provenance,
    RobustnessReport,
    RunConfig,
    StageFailure,
)
from src.models.testbed import LabConfig
from src.providers import get_analyst
from src.services.attacks import SynFloodSynthesizer, expand_grid, feature_range, load_attack_grid, run_attack
from src.services.detector import evaluate_graph, save_model, train
from src.services.graph_builder import build_graph, write_graph
from src.services.mitigation import mitigate, sampled_injection, save_report
from src.services.sampler import class_histogram, compute_rates, stratified_sample
from src.services.standardizer import (
    fit_scaler,
    read_raw_csv,
    split_stratified,
    standardize_rows,
)
from src.services.testbed import generate_sessions, load_sessions, to_raw_frame
from src.utils.artifacts import ArtifactStore
from src.utils.logger import logger
from src.utils.seeds import derive_seed

MAPPING_PRESETS = {
    "cicflowmeter": PRESETS_DIR / "mapping_cicflowmeter.yaml",
    "nf_v2": PRESETS_DIR / "mapping_nf_v2.yaml",
}
RUN_PRESETS = {"mini": PRESETS_DIR / "run_mini.yaml"}


def load_run_config(path: Union[str, Path]) -> RunConfig:
    path = RUN_PRESETS.get(str(path), path)
    return RunConfig.model_validate(load_yaml(path))


def resolve_mapping(ref: Optional[str]):
    if ref is None:
        return load_mapping()
    return load_mapping(MAPPING_PRESETS.get(ref, ref))


def load_dataset(spec: DatasetInput) -> List[FlowRecord]:
    """Standardized flows of one configured input, tagged with its name as dataset_source."""
    if spec.synth is None:
        return standardize_rows(read_raw_csv(spec.path), resolve_mapping(spec.mapping), spec.name).records
    lab, sessions = load_sessions(spec.synth.sessions)
    if spec.synth.lab:
        lab = LabConfig.model_validate({**lab.model_dump(), **spec.synth.lab})
    flows = generate_sessions(sessions, lab, seed=spec.synth.seed, dataset_source=spec.name,
                              rate_scale=spec.synth.rate_scale)
    if spec.synth.raw_layout == "unified":
        return flows
    # round-trip through the raw layout so the standardizer sees a foreign schema
    mapping = resolve_mapping(spec.mapping or spec.synth.raw_layout)
    return standardize_rows(to_raw_frame(flows), mapping, spec.name).records


@dataclass
class _Split:
    train: List[FlowRecord]
    test: List[FlowRecord]


@dataclass
class _RunState:
    cfg: RunConfig
    store: ArtifactStore
    report: RobustnessReport
    splits: Dict[str, _Split] = field(default_factory=dict)
    unified_stats: Optional[ScalerStats] = None
    unified_model: Optional[DetectorModel] = None
    clean_test: Optional[CommGraph] = None
    injected: List[Tuple[str, AttackedGraph]] = field(default_factory=list)

    def seed(self, label: str) -> int:
        s = derive_seed(self.cfg.seed, label)
        self.report.provenance.seeds[label] = s
        return s


def _fit_and_evaluate(state: _RunState, label: str, train_rows: Sequence[FlowRecord],
                      test_rows: Sequence[FlowRecord]) -> Tuple[ScalerStats, DetectorModel, CommGraph, CommGraph]:
    cfg = state.cfg
    stats = fit_scaler(train_rows, cfg.features)
    train_graph = build_graph(train_rows, cfg.features, stats, cfg.node_feature_width)
    test_graph = build_graph(test_rows, cfg.features, stats, cfg.node_feature_width)
    model = train(train_graph, seed=state.seed(f"train/{label}"), config=cfg.detector, stats=stats)
    state.store.save_model("scalers", label, stats)
    save_model(model, state.store.path("models", label))
    return stats, model, train_graph, test_graph


def _sources(rows: Sequence[FlowRecord]) -> List[str]:
    return sorted({r.dataset_source for r in rows})


def _step_prepare(state: _RunState) -> None:
    cfg = state.cfg
    for spec in cfg.datasets:
        rows = load_dataset(spec)
        if cfg.sampling is not None:
            plan = compute_rates(class_histogram(rows), cfg.sampling)
            rows = stratified_sample(rows, plan, state.seed(f"sample/{spec.name}"))
            state.report.sampling_plans[spec.name] = plan
            state.store.save_model("plans", spec.name, plan)
        split = cfg.split.model_copy(update={"seed": state.seed(f"split/{spec.name}")})
        train_rows, test_rows = split_stratified(rows, split)
        state.splits[spec.name] = _Split(train_rows, test_rows)
        logger.info(f"{spec.name}: {len(train_rows)} train / {len(test_rows)} test flows")


def _step_baseline(state: _RunState) -> None:
    for name, split in state.splits.items():
        _, model, _, test_graph = _fit_and_evaluate(state, f"baseline/{name}", split.train, split.test)
        state.report.steps["step1_baseline"].append(ConditionResult(
            step="step1_baseline", condition=name, metrics=evaluate_graph(model, test_graph),
            train_sources=[name], test_sources=[name],
        ))


def _drift_pairs(state: _RunState) -> List[Tuple[str, str]]:
    if state.cfg.drift_pairs is not None:
        return [tuple(p) for p in state.cfg.drift_pairs]
    return list(permutations(state.splits, 2))


def _step_drift(state: _RunState) -> None:
    for a, b in _drift_pairs(state):
        train_rows, test_rows = state.splits[a].train, state.splits[b].test
        if set(_sources(train_rows)) & set(_sources(test_rows)):
            raise BenchError(f"Drift pair {a}->{b} shares dataset sources")
        _, model, _, test_graph = _fit_and_evaluate(state, f"drift/{a}->{b}", train_rows, test_rows)
        state.report.steps["step2_drift"].append(ConditionResult(
            step="step2_drift", condition=f"{a}->{b}", metrics=evaluate_graph(model, test_graph),
            train_sources=_sources(train_rows), test_sources=_sources(test_rows),
        ))


def _grid(cfg: RunConfig) -> AttackGrid:
    return cfg.attack_grid if isinstance(cfg.attack_grid, AttackGrid) else load_attack_grid(cfg.attack_grid)


def _step_attacks(state: _RunState) -> None:
    grid = _grid(state.cfg)
    configs = expand_grid(grid, state.seed("attacks"))
    if not configs:
        logger.info("Attack grid is empty; nothing to run")
        return
    train_rows = [r for s in state.splits.values() for r in s.train]
    test_rows = [r for s in state.splits.values() for r in s.test]
    stats, model, train_graph, clean = _fit_and_evaluate(state, "unified", train_rows, test_rows)
    state.unified_stats, state.unified_model, state.clean_test = stats, model, clean
    write_graph(clean, state.store.path("graphs", "unified_test", suffix=""))
    sources = _sources(test_rows)
    results = state.report.steps["step3_attacks"]
    results.append(ConditionResult(step="step3_attacks", condition="clean",
                                   metrics=evaluate_graph(model, clean),
                                   train_sources=_sources(train_rows), test_sources=sources))

    clip = feature_range(train_graph) if grid.clip_to_train_range else None
    synth = SynFloodSynthesizer(stats)

    def _run(c):
        return run_attack(clean, c, model=model, flow_synth=synth, clip_range=clip)

    with ThreadPoolExecutor(max_workers=settings.MAX_CONCURRENCY) as pool:
        attacked_all = list(pool.map(_run, configs))

    for c, attacked in zip(configs, attacked_all):
        path = state.store.save_model("manifests", c.condition, attacked.manifest)
        ref = state.store.relative(path)
        state.report.manifests[c.condition] = ManifestRef(path=ref, digest=state.store.digest(path))
        results.append(ConditionResult(
            step="step3_attacks", condition=c.condition,
            metrics=evaluate_graph(model, attacked.graph),
            train_sources=_sources(train_rows), test_sources=sources, manifest=ref, seed=c.seed,
        ))
        if c.kind == AttackKind.NODE_INJECT:
            results.append(ConditionResult(
                step="step3_attacks", condition=f"{c.condition}[original edges]",
                metrics=evaluate_graph(model, attacked.graph, attacked.graph.edge_mask_original()),
                train_sources=_sources(train_rows), test_sources=sources, manifest=ref, seed=c.seed,
            ))
            state.injected.append((c.condition, attacked))


def _step_mitigation(state: _RunState) -> None:
    if not state.injected:
        return
    if state.unified_model is None:
        raise BenchError("Mitigation needs the attack stage's model")
    cfg = state.cfg.mitigation
    client = get_analyst(cfg.client)
    synth = SynFloodSynthesizer(state.unified_stats)
    for condition, attacked in state.injected:
        clean, manifest_ref = state.clean_test, state.report.manifests[condition].path
        if cfg.sample_nodes is not None:
            label = f"{condition}@{cfg.sample_nodes}"
            clean, attacked = sampled_injection(state.clean_test, attacked.manifest.config, synth,
                                                cfg.sample_nodes, state.seed(f"mitigation/{label}"))
            path = state.store.save_model("manifests", label, attacked.manifest)
            manifest_ref = state.store.relative(path)
            state.report.manifests[label] = ManifestRef(path=manifest_ref, digest=state.store.digest(path))
            condition = label
        _, report = mitigate(clean, attacked, state.unified_model, client, cfg)
        report = report.model_copy(update={"condition": condition})
        save_report(report, state.store.path("mitigation", condition))
        state.report.mitigation.append(report)
        for name in ("clean", "attacked", "fixed"):
            state.report.steps["step4_mitigation"].append(ConditionResult(
                step="step4_mitigation", condition=f"{condition}/{name}", metrics=report.metrics[name],
                manifest=manifest_ref,
            ))


_STAGES: List[Tuple[str, Callable[[_RunState], None], Tuple[str, ...]]] = [
    ("prepare", _step_prepare, ()),
    ("step1_baseline", _step_baseline, ("prepare",)),
    ("step2_drift", _step_drift, ("prepare",)),
    ("step3_attacks", _step_attacks, ("prepare",)),
    ("step4_mitigation", _step_mitigation, ("step3_attacks",)),
]


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(cfg.model_dump_json().encode("utf-8")).hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def run_protocol(cfg: RunConfig, output_dir: Union[str, Path, None] = None) -> RobustnessReport:
    """Run every stage; a failed stage is recorded and its dependents are skipped."""
    store = ArtifactStore(output_dir or cfg.output_dir)
    report = RobustnessReport(
        name=cfg.name,
        provenance=Provenance(config_hash=config_hash(cfg), master_seed=cfg.seed, started_at=_now()),
    )
    state = _RunState(cfg=cfg, store=store, report=report)
    failed: set = set()
    for name, stage, needs in _STAGES:
        if failed & set(needs):
            logger.warning(f"Skipping {name}: depends on failed stage")
            failed.add(name)
            continue
        logger.info(f"Running {name}")
        try:
            stage(state)
        except Exception as e:
            logger.error(f"Stage {name} failed: {e}")
            report.failures.append(StageFailure(stage=name, error_type=type(e).__name__, message=str(e)))
            failed.add(name)
    if failed:
        report.status = "partial"
    report.provenance.finished_at = _now()
    return report


def report_rows(report: RobustnessReport) -> pd.DataFrame:
    rows = [
        {"step": c.step, "condition": c.condition, "metric": metric, "value": value}
        for c in report.conditions()
        for metric, value in c.metrics.scalars().items()
    ]
    return pd.DataFrame(rows, columns=["step", "condition", "metric", "value"])


def emit_report(report: RobustnessReport, path: Union[str, Path]) -> Tuple[Path, Path]:
    """Write the report as JSON plus a flat (step, condition, metric, value) CSV alongside it."""
    path = Path(path)
    if path.suffix != ".json":
        path = path / "report.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.model_dump_json(indent=2), encoding="utf-8")
    csv_path = path.with_suffix(".csv")
    report_rows(report).to_csv(csv_path, index=False)
    logger.info(f"Report written to {path} and {csv_path}")
    return path, csv_path


def load_report(path: Union[str, Path]) -> RobustnessReport:
    return RobustnessReport.model_validate_json(Path(path).read_text(encoding="utf-8"))
