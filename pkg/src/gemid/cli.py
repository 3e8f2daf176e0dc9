"""Command-line entry point: extract, select, train, study, aggregate, synth.

All randomness flows from --seed through named sub-streams, so stages can
be re-run in isolation; --threads (or GEMID_THREADS) caps parallelism and
never changes results.  Exit codes: 0 success, 1 internal error, 2
usage/input error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import flows, windows
from .errors import (EmptySchemaError, GemidError, LeakageError,
                     SchemaMismatchError, UnsupportedFormatError, UsageError)
from .headers import default_header_schema
from .ingest import (ExtractionStats, Partition, header_rows, load_labels,
                     load_partition, make_partition, split_sessions,
                     store_partition)
from .models import ModelSpec, default_ranges, random_search, save_model, train
from .schema import apply_filters, load_schema, rule_filter
from .selection import SelectionConfig, run_selection, write_selection_artifacts
from .study import (AggregationConfig, StudyPlan, aggregate_predictions,
                    Predictions, run_study, write_study_artifacts)
from .synth import (default_devices, default_environments, generate,
                    plant_confounder)
from .table import FeatureTable
from .util import derive_seed, ordered_map, resolve_threads, write_csv


def _family_schema(family: str):
    if family == "header":
        return rule_filter(default_header_schema())
    if family == "flow":
        return flows.default_flow_schema()
    if family == "window":
        return windows.default_window_schema()
    raise UsageError(f"unknown schema family {family!r}")


def _extract_rows(family: str, pcap_path, label_map, schema, stats):
    if family == "header":
        return header_rows(pcap_path, label_map, schema, stats)
    infos = flows.iter_packet_infos(pcap_path, label_map, stats)
    if family == "flow":
        return flows.flow_extract(infos)
    return windows.window_extract(infos)


def cmd_extract(args) -> int:
    threads = resolve_threads(args.threads)
    if not Path(args.labels).exists():
        raise UsageError(f"labels file not found: {args.labels}")
    label_map = load_labels(args.labels)
    schema = load_schema(args.schema_file) if args.schema_file else _family_schema(args.schema)
    family = schema.family

    pcaps = [Path(p) for p in args.pcap]
    for p in pcaps:
        if not p.exists():
            raise UsageError(f"pcap not found: {p}")

    stats_list = [ExtractionStats() for _ in pcaps]
    row_lists = ordered_map(
        lambda i: _extract_rows(family, pcaps[i], label_map, schema, stats_list[i]),
        list(range(len(pcaps))), threads)

    partitions = []
    for pcap, rows in zip(pcaps, row_lists):
        base = make_partition(pcap.stem, pcap.stem, "s1", rows, [pcap])
        partitions.extend(split_sessions(base, args.split_sessions))

    all_records = [r for p in partitions for r in p.records]
    if not all_records:
        raise UsageError("no labeled packets extracted; check the label map")
    filtered_schema = apply_filters(schema, all_records)
    from .ingest import project_records

    out = Path(args.out)
    counts: dict = {}
    for partition in partitions:
        projected = project_records(partition.records, schema, filtered_schema)
        final = Partition(partition.name, partition.family, partition.session,
                          tuple(projected), partition.source_files)
        store_partition(final, filtered_schema, out / partition.name)
        for r in final.records:
            per = counts.setdefault(r.label, {})
            per[partition.name] = per.get(partition.name, 0) + 1

    names = [p.name for p in partitions]
    active = len(filtered_schema.active_names)
    total = len(schema.active_names)
    print(f"schema family={family} active {active}/{total} features "
          f"(hash {filtered_schema.hash})")
    print("rows per device and partition:")
    print(",".join(["device"] + names))
    for device in sorted(counts):
        print(",".join([device] + [str(counts[device].get(n, 0)) for n in names]))
    for pcap, stats in zip(pcaps, stats_list):
        print(f"{pcap.name}: read={stats.packets_read} labeled={stats.labeled} "
              f"unlabeled={stats.unlabeled} malformed={stats.malformed}")
    return 0


def _load_partitions(paths):
    partitions, schema = [], None
    for path in paths:
        part, part_schema = load_partition(path)
        if schema is not None and part_schema.hash != schema.hash:
            raise SchemaMismatchError(
                f"{path}: schema {part_schema.hash} != {schema.hash} of earlier stores")
        schema = part_schema
        partitions.append(part)
    partitions.sort(key=lambda p: p.name)
    return partitions, schema


def cmd_select(args) -> int:
    threads = resolve_threads(args.threads)
    partitions, schema = _load_partitions(args.partitions)
    if len(partitions) < 4:
        raise UsageError(f"selection needs >= 4 partitions, got {len(partitions)}")
    if args.config:
        cfg = SelectionConfig.from_json(args.config)
        if args.seed is not None:
            raise UsageError("--seed conflicts with a config file (set seed there)")
    else:
        cfg = SelectionConfig(seed=args.seed if args.seed is not None else 42)
    result = run_selection(partitions, list(schema.active_names), cfg, threads)
    write_selection_artifacts(result, cfg, args.out, figures=not args.no_figures)
    print(f"selected set: {result.final.name} "
          f"({len(result.final.features)} features, mean DD F1 {result.final.mean_f1:.3f})")
    print("features: " + ", ".join(result.final.features))
    return 0


def cmd_train(args) -> int:
    threads = resolve_threads(args.threads)
    partitions, schema = _load_partitions(args.partitions)
    features = _read_features(args.features) if args.features else list(schema.active_names)
    seed = args.seed if args.seed is not None else 42

    if args.search:
        from .contexts import build_contexts
        from .selection import TableSet

        tables = TableSet(partitions, features)
        contexts = build_contexts(partitions)
        ranges = default_ranges(args.algorithm, len(features))
        spec, trace = random_search(args.algorithm, ranges, args.search, contexts,
                                    tables, seed=seed, threads=threads)
        print(f"best draw: {spec.hyperparameters}")
        trace_path = Path(args.out).with_suffix(".search.json")
        with open(trace_path, "w") as fh:
            json.dump(trace, fh, indent=1, sort_keys=True)
            fh.write("\n")
    else:
        params = json.loads(args.params) if args.params else {}
        spec = ModelSpec(args.algorithm, params)

    table = FeatureTable.from_partitions(partitions, features)
    model = train(spec, table, seed=seed, schema_hash=schema.hash, threads=threads)
    save_model(model, args.out)
    print(f"trained {spec.algorithm} on {len(table)} records "
          f"x {table.n_features} features -> {args.out}")
    return 0


def _read_features(path) -> list:
    with open(path) as fh:
        doc = json.load(fh)
    return list(doc["features"]) if isinstance(doc, dict) else list(doc)


def cmd_study(args) -> int:
    threads = resolve_threads(args.threads)
    if not Path(args.plan).exists():
        raise UsageError(f"plan not found: {args.plan}")
    plan = StudyPlan.from_json(args.plan)
    if args.aggregate is not None:
        plan.aggregate = args.aggregate or None  # --aggregate 0 disables
    result = run_study(plan, threads)
    write_study_artifacts(result, plan, args.out, figures=not args.no_figures)
    if args.markdown:
        _write_markdown_tables(result, Path(args.out))
    for kind, mean in result.kind_means.items():
        print(f"{kind} mean macro F1: {mean['macro_f1']:.3f}")
    return 0


def _write_markdown_tables(result, out: Path) -> None:
    lines = ["| kind | context | accuracy | kappa | macro F1 |",
             "|---|---|---|---|---|"]
    for kind in ("CV", "SS", "DD"):
        for r in [r for r in result.reports if r.kind == kind]:
            s = r.scores
            lines.append(f"| {kind} | {r.name} | {s.accuracy:.3f} | "
                         f"{s.kappa:.3f} | {s.macro_f1:.3f} |")
        if kind in result.kind_means:
            m = result.kind_means[kind]
            lines.append(f"| {kind} | **Mean** | {m['accuracy']:.3f} | "
                         f"{m['kappa']:.3f} | {m['macro_f1']:.3f} |")
    (out / "table1.md").write_text("\n".join(lines) + "\n")


def cmd_aggregate(args) -> int:
    path = Path(args.predictions)
    if not path.exists():
        raise UsageError(f"predictions file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader)
        if header[:5] != ["source_key", "session", "ts", "true", "predicted"]:
            raise UsageError(f"{path}: not a predictions table")
        classes = tuple(h[len("proba_"):] for h in header[5:])
        rows = list(reader)
    index = {c: i for i, c in enumerate(classes)}
    preds = Predictions(
        classes,
        [r[0] for r in rows],
        [r[1] for r in rows],
        np.array([float(r[2]) for r in rows]),
        np.array([index[r[3]] for r in rows], dtype=np.int64),
        np.array([index[r[4]] for r in rows], dtype=np.int64),
        np.array([[float(v) for v in r[5:]] for r in rows]),
    )
    true_codes, pred_codes = aggregate_predictions(preds, AggregationConfig(args.group_size))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "aggregated_predictions.csv",
              ["group", "true", "predicted"],
              [[i, classes[t], classes[p]]
               for i, (t, p) in enumerate(zip(true_codes, pred_codes))])
    from .metrics import ConfusionMatrix, ScoreReport

    cm = ConfusionMatrix.from_labels([classes[t] for t in true_codes],
                                     [classes[p] for p in pred_codes])
    report = ScoreReport.from_matrix(cm)
    with open(out / "aggregated_report.json", "w") as fh:
        json.dump({"group_size": args.group_size, "n_groups": int(len(true_codes)),
                   **report.to_dict()}, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"aggregated {len(preds)} predictions into {len(true_codes)} groups "
          f"(g={args.group_size}); macro F1 {report.macro_f1:.3f}")
    return 0


def cmd_synth(args) -> int:
    seed = args.seed if args.seed is not None else 42
    devices = default_devices(args.devices)
    envs = default_environments()
    devices = plant_confounder(devices, envs, args.confounder_strength, seed)
    result = generate(devices, envs, args.packets, seed, args.out)
    for env, path in result.pcap_paths.items():
        print(f"{env}: {path}")
    print(f"labels: {result.labels_path}")
    print(f"ground truth: {result.ground_truth_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gemid",
        description="Device identification from packet headers, with "
                    "cross-environment feature selection and baselines.")
    parser.add_argument("--threads", type=int, default=None,
                        help="parallelism cap (default: GEMID_THREADS or 1)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="pcap -> partition stores of feature tables")
    p.add_argument("--pcap", action="append", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--schema", default="header", choices=["header", "flow", "window"])
    p.add_argument("--schema-file", default=None,
                   help="custom descriptor catalog (header family)")
    p.add_argument("--split-sessions", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("select", help="kappa scan -> votes -> GA -> final features")
    p.add_argument("--partitions", nargs="+", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("train", help="train (or random-search) one model")
    p.add_argument("--partitions", nargs="+", required=True)
    p.add_argument("--features", default=None)
    p.add_argument("--algorithm", default="RF", choices=["DT", "RF", "KNN", "NB", "LR"])
    p.add_argument("--params", default=None, help="hyperparameter JSON object")
    p.add_argument("--search", type=int, default=0, metavar="N_DRAWS")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("study", help="run a CV/SS/DD generalizability study")
    p.add_argument("--plan", required=True)
    p.add_argument("--aggregate", type=int, default=None,
                   help="group size for aggregated reporting (0 disables)")
    p.add_argument("--markdown", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("aggregate", help="majority-vote a predictions table")
    p.add_argument("--predictions", required=True)
    p.add_argument("--group-size", type=int, default=12)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("synth", help="generate the two-environment test dataset")
    p.add_argument("--devices", type=int, default=8)
    p.add_argument("--packets", type=int, default=2000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--confounder-strength", type=float, default=0.7)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except LeakageError as exc:
        print(f"leakage assertion failed: {exc}", file=sys.stderr)
        return 1
    except (UsageError, UnsupportedFormatError, SchemaMismatchError,
            EmptySchemaError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except GemidError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - unexpected
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
