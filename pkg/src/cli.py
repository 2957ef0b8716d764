import argparse
import sys
from pathlib import Path
from typing import List, Optional

from rich.console import Console
from rich.progress import Progress, SpinnerColumn, TextColumn
from rich.table import Table

from src.config import settings
from src.core.schema import load_yaml
from src.models.attack import AttackConfig, AttackKind, AttackManifest, AttackedGraph
from src.models.detector import DetectorConfig
from src.models.flow import NUMERIC_FEATURES
from src.models.mitigation import MitigationConfig
from src.models.report import RobustnessReport
from src.models.sampling import SamplingConfig
from src.providers import get_analyst
from src.services.attacks import SynFloodSynthesizer, feature_range, replay_manifest, run_attack
from src.services.detector import evaluate_graph, load_model, save_model, train
from src.services.graph_builder import build_graph, read_graph, write_graph
from src.services.harness import resolve_mapping, emit_report, load_run_config, run_protocol
from src.services.mitigation import mitigate, save_report
from src.services.sampler import sample_csv
from src.services.standardizer import (
    fit_scaler,
    load_scaler,
    read_flows,
    read_raw_csv,
    save_scaler,
    standardize_rows,
    write_flows,
)
from src.services.testbed import generate_sessions, load_sessions, to_raw_frame
from src.utils.logger import logger, set_level

console = Console()

METRIC_COLUMNS = ("accuracy", "precision_weighted", "precision_attack", "recall", "f1_weighted", "auc")


def metrics_table(title: str, rows: List[tuple]) -> Table:
    table = Table(title=title, show_header=True, header_style="bold magenta")
    table.add_column("Condition", style="cyan")
    for col in METRIC_COLUMNS:
        table.add_column(col, justify="right")
    for condition, m in rows:
        table.add_row(condition, *(f"{getattr(m, col):.3f}" for col in METRIC_COLUMNS))
    return table


def render_report(report: RobustnessReport):
    for step, results in report.steps.items():
        if results:
            console.print(metrics_table(step, [(r.condition, r.metrics) for r in results]))
    for m in report.mitigation:
        console.print(f"[bold]{m.condition}[/bold]: nodes {m.nodes_before} -> {m.nodes_after}, "
                      f"CF={m.correctly_flagged} IF={m.incorrectly_flagged} "
                      f"recall={m.mitigation_recall:.3f}")
    for f in report.failures:
        console.print(f"[bold red]{f.stage} failed[/bold red]: {f.error_type}: {f.message}")


def cmd_standardize(args):
    mapping = resolve_mapping(args.mapping)
    result = standardize_rows(read_raw_csv(args.input), mapping, args.source)
    write_flows(result.records, args.out)
    console.print(f"[green]✔[/green] {len(result.records)} flows written to {args.out} "
                  f"({result.rows_skipped} skipped)")


def cmd_sample(args):
    cfg = SamplingConfig.model_validate(load_yaml(args.config)) if args.config else SamplingConfig()
    plan = sample_csv(args.input, args.out, cfg, args.seed, chunk_size=args.chunk_size)
    if args.emit_plan:
        Path(args.emit_plan).parent.mkdir(parents=True, exist_ok=True)
        Path(args.emit_plan).write_text(plan.model_dump_json(indent=2), encoding="utf-8")
    table = Table(title="Sampling plan", header_style="bold magenta")
    for col in ("Class", "N_c", "rate", "selected", "branch"):
        table.add_column(col)
    for c in plan.classes:
        table.add_row(c.label, str(c.n_c), f"{c.rate:.4f}", str(c.selected_count), c.branch)
    console.print(table)


def cmd_graph(args):
    flows = read_flows(args.input)
    features = args.features or list(NUMERIC_FEATURES)
    if args.scaler and Path(args.scaler).exists():
        stats = load_scaler(args.scaler)
    else:
        stats = fit_scaler(flows, features)
        if args.scaler:
            save_scaler(stats, args.scaler)
    graph = build_graph(flows, stats.feature_names, stats, args.node_width)
    write_graph(graph, args.out)
    console.print(f"[green]✔[/green] Graph with {graph.num_nodes} nodes / {graph.num_edges} edges at {args.out}")


def cmd_train(args):
    graph = read_graph(args.graph)
    config = DetectorConfig(hidden=args.hidden, learning_rate=args.lr, epochs=args.epochs)
    stats = load_scaler(args.scaler) if args.scaler else None
    model = train(graph, seed=args.seed, config=config, stats=stats)
    save_model(model, args.out)
    console.print(metrics_table("Training fit", [("train", evaluate_graph(model, graph))]))
    if args.test_graph:
        console.print(metrics_table("Held out", [("test", evaluate_graph(model, read_graph(args.test_graph)))]))


def cmd_attack(args):
    graph = read_graph(args.graph)
    cfg = AttackConfig(kind=AttackKind(args.kind), epsilon=args.epsilon, steps=args.steps,
                       fraction=args.fraction, seed=args.seed,
                       clip_to_train_range=args.clip_graph is not None)
    model = load_model(args.model) if args.model else None
    synth = SynFloodSynthesizer(load_scaler(args.scaler)) if args.scaler else None
    clip = feature_range(read_graph(args.clip_graph)) if args.clip_graph else None
    attacked = run_attack(graph, cfg, model=model, flow_synth=synth, clip_range=clip)
    out = Path(args.out)
    write_graph(attacked.graph, out)
    (out / "manifest.json").write_text(attacked.manifest.model_dump_json(indent=2), encoding="utf-8")
    rows = [("clean", evaluate_graph(model, graph)), (cfg.condition, evaluate_graph(model, attacked.graph))] if model else []
    if rows:
        console.print(metrics_table("Attack impact", rows))
    console.print(f"[green]✔[/green] {cfg.condition} written to {out}")


def cmd_mitigate(args):
    clean = read_graph(args.clean)
    manifest = AttackManifest.model_validate_json(Path(args.manifest).read_text(encoding="utf-8"))
    attacked = AttackedGraph(graph=replay_manifest(clean, manifest), manifest=manifest)
    model = load_model(args.model)
    cfg = MitigationConfig(client=args.client, threshold=args.threshold)
    with Progress(SpinnerColumn(), TextColumn("[progress.description]{task.description}"), transient=True) as progress:
        progress.add_task(description=f"Scoring {attacked.graph.num_nodes} nodes with {cfg.client} analyst...", total=None)
        fixed, report = mitigate(clean, attacked, model, get_analyst(cfg.client), cfg)
    save_report(report, args.out)
    console.print(metrics_table("Mitigation", [(k, v) for k, v in report.metrics.items()]))
    console.print(f"nodes {report.nodes_before} -> {report.nodes_after}, CF={report.correctly_flagged} "
                  f"IF={report.incorrectly_flagged}, recall={report.mitigation_recall:.3f}")


def cmd_synth(args):
    lab, sessions = load_sessions(args.sessions)
    flows = generate_sessions(sessions, lab, seed=args.seed, dataset_source=args.source,
                              rate_scale=args.rate_scale)
    if args.layout == "cicflowmeter":
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        to_raw_frame(flows).to_csv(args.out, index=False)
    else:
        write_flows(flows, args.out)
    console.print(f"[green]✔[/green] {len(flows)} flows ({sum(f.attack for f in flows)} attack) written to {args.out}")


def cmd_run(args) -> int:
    cfg = load_run_config(args.config)
    if args.seed is not None:
        cfg = cfg.model_copy(update={"seed": args.seed})
    output_dir = Path(args.output_dir or cfg.output_dir or Path(settings.OUTPUT_DIR) / cfg.name)
    with Progress(SpinnerColumn(), TextColumn("[progress.description]{task.description}"), transient=True) as progress:
        progress.add_task(description=f"Running protocol {cfg.name}...", total=None)
        report = run_protocol(cfg, output_dir)
    emit_report(report, output_dir / "report.json")
    render_report(report)
    if report.partial:
        console.print("[bold red]Run incomplete; see failures above.[/bold red]")
        return 1
    console.print(f"\n[blue]Saved output to {output_dir}[/blue]")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nfbench", description="NetFlow robustness benchmark")
    parser.add_argument("--log-level", help="Override LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("standardize", help="Map a raw flow CSV onto the unified schema")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--mapping", help="Mapping YAML or preset name (cicflowmeter, nf_v2)")
    p.add_argument("--source", required=True, help="dataset_source tag")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_standardize)

    p = sub.add_parser("sample", help="Adaptive stratified sampling of a unified CSV")
    p.add_argument("--config", help="SamplingConfig YAML")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--emit-plan", help="Write the sampling plan JSON here")
    p.add_argument("--chunk-size", type=int, default=50_000)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("graph", help="Build a communication graph from unified flows")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--scaler", help="ScalerStats JSON; fitted on the input and written here if missing")
    p.add_argument("--features", nargs="+")
    p.add_argument("--node-width", type=int, default=8)
    p.add_argument("--out", required=True, help="Output directory")
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("train", help="Train the reference detector on a graph")
    p.add_argument("--graph", required=True)
    p.add_argument("--test-graph")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--scaler", help="Scaler JSON the graph was built with; stored on the model")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="Apply one attack configuration to a graph")
    p.add_argument("--graph", required=True)
    p.add_argument("--kind", required=True, choices=[k.value for k in AttackKind])
    p.add_argument("--epsilon", type=float, default=0.0)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--fraction", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model", help="Detector JSON (needed for PGD)")
    p.add_argument("--scaler", help="ScalerStats JSON (needed for NodeInject)")
    p.add_argument("--clip-graph", help="Clip PGD to this (training) graph's feature range")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("mitigate", help="Run the analyst pruning loop on an attacked graph")
    p.add_argument("--clean", required=True, help="Clean graph directory")
    p.add_argument("--manifest", required=True, help="Attack manifest JSON")
    p.add_argument("--model", required=True)
    p.add_argument("--client", default="heuristic", choices=["heuristic", "openai"])
    p.add_argument("--threshold", type=float, default=0.6)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mitigate)

    p = sub.add_parser("synth", help="Generate labeled lab sessions")
    p.add_argument("--sessions", help="Session YAML (default: bundled three-session preset)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--source", default="testbed")
    p.add_argument("--rate-scale", type=float, default=1.0)
    p.add_argument("--layout", choices=["unified", "cicflowmeter"], default="unified")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="Run the four-step protocol from a RunConfig")
    p.add_argument("--config", default="mini", help="RunConfig YAML or preset name (mini)")
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv: Optional[List[str]] = None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.log_level:
        set_level(args.log_level)
    try:
        code = args.func(args)
    except Exception as e:
        console.print(f"[bold red]Error:[/bold red] {e}")
        logger.debug("Command failed", exc_info=True)
        sys.exit(1)
    sys.exit(code or 0)


if __name__ == "__main__":
    main()
