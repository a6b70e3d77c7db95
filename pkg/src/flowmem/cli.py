"""Command-line entry point.

Commands: sample, build, evaluate, ablate, stats, report. Configuration
comes from a JSON file with environment and flag overrides layered on top;
--offline swaps in the mock agents and hash embedder so every command runs
without network access.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .config import RunConfig, load_config
from .errors import ConfigError, FlowmemError
from .flows import (
    IngestReport,
    iter_labeled_flows,
    load_flows_by_ids,
    open_dataset,
    stratified_split,
)
from .labels import ClassSet
from .library import ExperienceLibrary, file_digest
from .metrics import MetricsReport, render_comparison_table
from .pipeline import (
    build_components,
    dump_curve_csv,
    dump_report,
    load_report,
    run_ablation,
    run_build,
    run_evaluate,
)


def _build_parser() -> argparse.ArgumentParser:
    # global flags are accepted both before and after the subcommand; the
    # SUPPRESS default keeps an unset subcommand flag from erasing a value
    # parsed at the top level
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON configuration file")
    common.add_argument(
        "--seed", type=int, default=argparse.SUPPRESS, help="override the run seed"
    )
    common.add_argument(
        "--tau", type=float, default=argparse.SUPPRESS,
        help="override the similarity threshold",
    )
    common.add_argument(
        "--offline",
        action="store_true",
        default=argparse.SUPPRESS,
        help="use the mock agents and hash embedder (no network)",
    )

    parser = argparse.ArgumentParser(
        prog="flowmem",
        description="Retrieval-grounded flow classification with an experience library",
        parents=[common],
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", parents=[common], help="draw a class-balanced build/eval split")
    p.add_argument("--dataset", help="CSV dataset (gzip accepted with .gz)")
    p.add_argument("--build", type=int, help="total build-set quota")
    p.add_argument("--eval", type=int, dest="eval_quota", help="total eval-set quota")
    p.add_argument("--out", help="manifest output path")

    p = sub.add_parser("build", parents=[common], help="phase 1: construct the experience library")
    p.add_argument("--dataset")
    p.add_argument("--manifest")
    p.add_argument("--library")
    p.add_argument("--report")
    p.add_argument("--curve")
    p.add_argument("--transcript")
    p.add_argument("--mode", choices=("full", "library_only", "zero_shot"), default="full")

    p = sub.add_parser("evaluate", parents=[common], help="phase 2: classify against a frozen library")
    p.add_argument("--dataset")
    p.add_argument("--manifest")
    p.add_argument("--library")
    p.add_argument("--report")
    p.add_argument("--transcript")
    p.add_argument("--mode", choices=("library_only", "zero_shot"), default="library_only")

    p = sub.add_parser("ablate", parents=[common], help="run zero_shot, full, and library_only side by side")
    p.add_argument("--dataset")
    p.add_argument("--manifest")
    p.add_argument("--out-dir", default=".")

    p = sub.add_parser("stats", parents=[common], help="per-class rule distribution of a library")
    p.add_argument("--library")
    p.add_argument("--json", action="store_true", dest="as_json")

    p = sub.add_parser("report", parents=[common], help="render saved reports as a comparison table")
    p.add_argument("--inputs", nargs="+", required=True)

    return parser


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    config = load_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "tau", None) is not None:
        config.tau = args.tau
    if getattr(args, "offline", False):
        config.force_offline()
    if getattr(args, "dataset", None):
        config.paths.dataset = args.dataset
    for attr, target in (
        ("manifest", "manifest"),
        ("library", "library"),
        ("report", "report"),
        ("curve", "curve_csv"),
        ("transcript", "transcript"),
    ):
        value = getattr(args, attr, None)
        if value:
            setattr(config.paths, target, value)
    if getattr(args, "mode", None):
        config.ablation_mode = args.mode
    return config


def _read_manifest(config: RunConfig) -> dict:
    try:
        with open(config.paths.manifest, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(
            f"split manifest not found: {config.paths.manifest} (run 'flowmem sample' first)"
        ) from None


def _flows_for(config: RunConfig, flow_ids: list[int]):
    class_set = ClassSet(config.class_set)
    if not config.paths.dataset:
        raise ConfigError("no dataset path configured")
    with open_dataset(config.paths.dataset) as stream:
        return load_flows_by_ids(stream, config.schema_map, class_set, flow_ids)


def cmd_sample(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    if args.build is not None:
        config.quota_build = args.build
    if args.eval_quota is not None:
        config.quota_eval = args.eval_quota
    if args.out:
        config.paths.manifest = args.out
    class_set = ClassSet(config.class_set)
    report = IngestReport()
    with open_dataset(config.paths.dataset) as stream:
        flows = iter_labeled_flows(stream, config.schema_map, class_set, report)
        split = stratified_split(
            flows, config.quota_build, config.quota_eval, config.seed, class_set
        )
    manifest = split.to_manifest()
    manifest["dataset"] = config.paths.dataset
    manifest["config_hash"] = config.config_hash()
    manifest["ingest"] = report.to_json()
    with open(config.paths.manifest, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"manifest written to {config.paths.manifest}")
    for name, counts in split.per_class_counts.items():
        deficit = split.deficits.get(name, 0)
        note = f" (deficit {deficit})" if deficit else ""
        print(f"  {name}: build {counts['build']}, eval {counts['eval']}{note}")
    return 0


def cmd_build(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    manifest = _read_manifest(config)
    flows = _flows_for(config, manifest["build_flow_ids"])
    library = None
    if config.ablation_mode == "library_only":
        library = ExperienceLibrary.load(
            config.paths.library, expected_dim=config.embedder.dim, read_only=True
        )
    report = run_build(
        flows,
        config,
        build_components(config),
        library,
        library_path=config.paths.library if config.ablation_mode == "full" else None,
        transcript_path=config.paths.transcript,
        checkpoint_path=config.paths.checkpoint if config.ablation_mode == "full" else None,
    )
    dump_report(report, config.paths.report)
    dump_curve_csv(report.curve, config.paths.curve_csv)
    totals = report.totals
    print(
        f"build complete: {totals['flows']} flows, "
        f"{totals['inductions']} rules induced, "
        f"library size {report.library['size_after']}"
    )
    if report.metrics:
        print(f"construction macro F1: {report.metrics['macro_f1'] * 100:.2f}%")
    print(f"report written to {config.paths.report}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    manifest = _read_manifest(config)
    flows = _flows_for(config, manifest["eval_flow_ids"])
    library = None
    digest_before = None
    if config.ablation_mode == "zero_shot":
        if args.library:
            raise ConfigError("zero_shot evaluation forbids a library")
    else:
        if not os.path.exists(config.paths.library):
            raise ConfigError(f"library file not found: {config.paths.library}")
        digest_before = file_digest(config.paths.library)
        library = ExperienceLibrary.load(
            config.paths.library, expected_dim=config.embedder.dim, read_only=True
        )
    report = run_evaluate(
        flows,
        config,
        build_components(config),
        library,
        transcript_path=config.paths.transcript,
    )
    if digest_before is not None:
        digest_after = file_digest(config.paths.library)
        if digest_after != digest_before:
            raise RuntimeError("library file changed during evaluation")
        report.library["file_digest_before"] = digest_before
        report.library["file_digest_after"] = digest_after
    dump_report(report, config.paths.report)
    if report.metrics:
        print(
            f"evaluation ({report.mode}): accuracy {report.metrics['accuracy'] * 100:.2f}%, "
            f"macro F1 {report.metrics['macro_f1'] * 100:.2f}%"
        )
    print(f"report written to {config.paths.report}")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    manifest = _read_manifest(config)
    flows = _flows_for(config, manifest["build_flow_ids"])
    os.makedirs(args.out_dir, exist_ok=True)
    result = run_ablation(flows, config, transcript_dir=args.out_dir)
    rows: list[tuple[str, MetricsReport]] = []
    for name, sub_report in result.reports():
        path = os.path.join(args.out_dir, f"report_{name}.json")
        dump_report(sub_report, path)
        metrics = sub_report.metrics_report()
        if metrics is not None:
            rows.append((name, metrics))
    for name, sub_report in (("zero_shot", result.zero_shot), ("full", result.full)):
        dump_curve_csv(
            sub_report.curve, os.path.join(args.out_dir, f"curve_{name}.csv")
        )
    library_path = os.path.join(args.out_dir, "experience.lib")
    result.library.save(library_path)
    table = render_comparison_table(rows)
    with open(os.path.join(args.out_dir, "comparison.txt"), "w", encoding="utf-8") as fh:
        fh.write(table + "\n")
    print(table)
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    if args.library:
        config.paths.library = args.library
    library = ExperienceLibrary.load(config.paths.library, read_only=True)
    stats = library.stats()
    if args.as_json:
        print(json.dumps(stats.to_json(), indent=2, sort_keys=True))
    else:
        width = max((len(name) for name in stats.per_class_rule_counts), default=5)
        print(f"{'Class':<{width}}  Rules")
        for name, count in stats.per_class_rule_counts.items():
            print(f"{name:<{width}}  {count}")
        print(f"{'Total':<{width}}  {stats.total}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    rows: list[tuple[str, MetricsReport]] = []
    for path in args.inputs:
        data = load_report(path)
        metrics = data.get("metrics")
        if metrics is None:
            continue
        rows.append(
            (
                os.path.basename(path),
                MetricsReport(
                    accuracy=metrics["accuracy"],
                    macro_precision=metrics["macro_precision"],
                    macro_recall=metrics["macro_recall"],
                    macro_f1=metrics["macro_f1"],
                    per_class=metrics["per_class"],
                ),
            )
        )
    print(render_comparison_table(rows))
    return 0


_COMMANDS = {
    "sample": cmd_sample,
    "build": cmd_build,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "stats": cmd_stats,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except FlowmemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
