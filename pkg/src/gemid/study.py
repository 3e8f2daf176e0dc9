"""Generalizability study: train per context, score under CV/SS/DD, report
per-context and per-device tables, and optionally aggregate consecutive
per-packet predictions into group-level predictions."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .contexts import CV, DD, EvalContext, build_contexts, fold_indices
from .errors import GemidError, SchemaMismatchError
from .ingest import load_partition
from .metrics import ConfusionMatrix, ScoreReport, time_inference
from .models import ModelSpec, train
from .selection import TableSet
from .util import derive_seed, write_csv


@dataclass
class Predictions:
    """Per-record predictions for one context, in capture order per record."""

    classes: tuple[str, ...]
    source_key: list
    session: list
    ts: np.ndarray
    true_codes: np.ndarray
    pred_codes: np.ndarray
    proba: np.ndarray

    def __len__(self):
        return len(self.true_codes)


@dataclass
class EvalReport:
    name: str
    kind: str
    granularity: str
    n_train: int
    n_test: int
    n_excluded_test: int
    train_only_classes: tuple[str, ...]
    test_only_classes: tuple[str, ...]
    scores: ScoreReport
    confusion: ConfusionMatrix
    fold_scores: list = field(default_factory=list)

    def row(self) -> list:
        return [self.kind, self.name, self.scores.accuracy, self.scores.kappa,
                self.scores.macro_f1, self.n_test]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "granularity": self.granularity,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "n_excluded_test": self.n_excluded_test,
            "train_only_classes": list(self.train_only_classes),
            "test_only_classes": list(self.test_only_classes),
            "scores": self.scores.to_dict(),
            "fold_scores": self.fold_scores,
        }


def _score_tables(train_tbl, test_tbl, spec: ModelSpec, seed: int,
                  include_zero_support: bool, threads: int = 1):
    """Train on one table, score on another over the train-present classes.

    Test records whose label never occurs in training are excluded from the
    matrix and reported; remaining scores live on the train-present class
    list.  Returns (ScoreReport, ConfusionMatrix, exclusions, Predictions).
    """
    classes = train_tbl.classes
    k = len(classes)
    train_present = np.flatnonzero(np.bincount(train_tbl.y, minlength=k) > 0)
    test_counts = np.bincount(test_tbl.y, minlength=k)
    test_present = np.flatnonzero(test_counts > 0)
    if not np.intersect1d(train_present, test_present).size:
        raise GemidError("train and test share no classes")

    model = train(spec, train_tbl, seed=seed, threads=threads)
    proba = model.predict_proba_array(test_tbl.X)
    pred = np.argmax(proba, axis=1)

    keep = np.isin(test_tbl.y, train_present)
    excluded = int((~keep).sum())
    sub_classes = tuple(classes[i] for i in train_present)
    remap = -np.ones(k, dtype=np.int64)
    remap[train_present] = np.arange(train_present.size)
    t = remap[test_tbl.y[keep]]
    p = remap[pred[keep]]
    counts = np.bincount(t * train_present.size + p,
                         minlength=train_present.size ** 2)
    cm = ConfusionMatrix(sub_classes, counts.reshape(train_present.size, -1))
    scores = ScoreReport.from_matrix(cm, include_zero_support)

    train_only = tuple(classes[i] for i in train_present if test_counts[i] == 0)
    test_only = tuple(classes[i] for i in test_present if i not in set(train_present))
    preds = Predictions(classes, list(test_tbl.meta["source_key"]),
                        list(test_tbl.meta["session"]), test_tbl.meta["ts"],
                        test_tbl.y.copy(), pred, proba)
    return scores, cm, (excluded, train_only, test_only), preds, model


def evaluate_context(ctx: EvalContext, spec: ModelSpec, tables: TableSet,
                     seed: int, include_zero_support: bool = False,
                     threads: int = 1):
    """Evaluate one context; returns (EvalReport, Predictions, model).

    CV reports the fold-mean scores with a summed confusion matrix and the
    out-of-fold prediction for every record; SS/DD train once and score the
    held-out partition.
    """
    if ctx.kind != CV:
        train_tbl = tables[ctx.train.name]
        test_tbl = tables[ctx.test.name]
        scores, cm, (excl, train_only, test_only), preds, model = _score_tables(
            train_tbl, test_tbl, spec, derive_seed(seed, "ctx", ctx.name),
            include_zero_support, threads)
        report = EvalReport(ctx.name, ctx.kind, "packet", len(train_tbl),
                            len(test_tbl) - excl, excl, train_only, test_only,
                            scores, cm)
        return report, preds, model

    table = tables[ctx.train.name]
    n = len(table)
    k = len(table.classes)
    fold_reports = []
    pred_codes = np.zeros(n, dtype=np.int64)
    proba = np.zeros((n, k))
    total = None
    model = None
    for fi, (tr_idx, te_idx) in enumerate(
            fold_indices(n, ctx.folds, seed, ctx.name)):
        scores, cm, _, fold_preds, model = _score_tables(
            table.rows(tr_idx), table.rows(te_idx), spec,
            derive_seed(seed, "ctx", ctx.name, fi), include_zero_support, threads)
        fold_reports.append(scores)
        pred_codes[te_idx] = fold_preds.pred_codes
        # fold models may span fewer classes; re-expand columns
        proba[np.ix_(te_idx, np.arange(k))] = fold_preds.proba
        if total is None or cm.classes == total.classes:
            total = cm if total is None else ConfusionMatrix(
                cm.classes, total.counts + cm.counts)
        else:  # differing fold class sets: re-embed into the full class list
            total = _embed(total, table.classes)
            total.counts += _embed(cm, table.classes).counts
    mean_scores = ScoreReport(
        accuracy=float(np.mean([s.accuracy for s in fold_reports])),
        kappa=float(np.mean([s.kappa for s in fold_reports])),
        macro_f1=float(np.mean([s.macro_f1 for s in fold_reports])),
        per_class={},
    )
    report = EvalReport(ctx.name, ctx.kind, "packet", n, n, 0, (), (),
                        mean_scores, total,
                        fold_scores=[s.macro_f1 for s in fold_reports])
    preds = Predictions(table.classes, list(table.meta["source_key"]),
                        list(table.meta["session"]), table.meta["ts"],
                        table.y.copy(), pred_codes, proba)
    return report, preds, model


def _embed(cm: ConfusionMatrix, classes) -> ConfusionMatrix:
    classes = tuple(classes)
    out = np.zeros((len(classes), len(classes)), dtype=np.int64)
    pos = {c: i for i, c in enumerate(classes)}
    for i, ci in enumerate(cm.classes):
        for j, cj in enumerate(cm.classes):
            out[pos[ci], pos[cj]] = cm.counts[i, j]
    return ConfusionMatrix(classes, out)


def context_macro_f1(ctx: EvalContext, spec: ModelSpec, tables: TableSet,
                     seed: int = 0, include_zero_support: bool = False) -> float:
    report, _, _ = evaluate_context(ctx, spec, tables, seed, include_zero_support)
    return report.scores.macro_f1


# ----------------------------------------------------------------------
# prediction aggregation
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class AggregationConfig:
    group_size: int = 12

    def __post_init__(self):
        if self.group_size < 1:
            raise GemidError("aggregation group size must be >= 1")


def aggregate_predictions(preds: Predictions, cfg: AggregationConfig):
    """Majority-vote consecutive runs of group_size predictions per
    (source_key, session); trailing partial groups are kept.

    Vote ties break to the tied class with the highest mean predicted
    probability over the group, then to the lexicographically first name.
    Returns (true_codes, pred_codes) arrays at group granularity.
    """
    g = cfg.group_size
    order: list = []
    buffers: dict = {}
    for i in range(len(preds)):
        key = (preds.source_key[i], preds.session[i])
        if key not in buffers:
            buffers[key] = []
            order.append(key)
        buffers[key].append(i)

    true_out, pred_out = [], []
    for key in order:
        idx = buffers[key]
        for start in range(0, len(idx), g):
            members = idx[start:start + g]
            votes = np.bincount(preds.pred_codes[members],
                                minlength=len(preds.classes))
            top = votes.max()
            tied = np.flatnonzero(votes == top)
            if tied.size == 1:
                winner = int(tied[0])
            else:
                mean_p = preds.proba[members][:, tied].mean(axis=0)
                best = np.flatnonzero(mean_p == mean_p.max())
                winner = int(tied[best[0]])  # classes sorted: first = lexicographic
            pred_out.append(winner)
            true_out.append(int(preds.true_codes[members[0]]))
    return np.array(true_out, dtype=np.int64), np.array(pred_out, dtype=np.int64)


def aggregated_report(report: EvalReport, preds: Predictions,
                      cfg: AggregationConfig,
                      include_zero_support: bool = False) -> EvalReport:
    """Group-granularity report computed from stored per-packet predictions."""
    true_codes, pred_codes = aggregate_predictions(preds, cfg)
    names = preds.classes
    present = np.flatnonzero(np.bincount(true_codes, minlength=len(names)) > 0)
    present = np.union1d(present, np.unique(pred_codes))
    sub = tuple(names[i] for i in present)
    remap = -np.ones(len(names), dtype=np.int64)
    remap[present] = np.arange(present.size)
    counts = np.bincount(remap[true_codes] * present.size + remap[pred_codes],
                         minlength=present.size ** 2).reshape(present.size, -1)
    cm = ConfusionMatrix(sub, counts)
    scores = ScoreReport.from_matrix(cm, include_zero_support)
    return EvalReport(report.name, report.kind, f"group[g={cfg.group_size}]",
                      report.n_train, int(len(true_codes)), 0, (), (),
                      scores, cm)


# ----------------------------------------------------------------------
# study orchestration
# ----------------------------------------------------------------------

@dataclass
class StudyPlan:
    partitions: dict
    model: ModelSpec
    features: list | None = None
    seed: int = 0
    aggregate: int | None = None
    include_zero_support: bool = False
    folds: int = 5

    @staticmethod
    def from_json(path) -> "StudyPlan":
        base = Path(path).parent
        with open(path) as fh:
            doc = json.load(fh)
        model = ModelSpec(doc["model"]["algorithm"],
                          doc["model"].get("hyperparameters", {}))
        features = doc.get("features")
        if isinstance(features, str):
            feat_path = Path(features)
            if not feat_path.is_absolute():
                feat_path = base / feat_path
            with open(feat_path) as fh:
                features = json.load(fh)["features"]
        partitions = {
            name: str(p if Path(p).is_absolute() else base / p)
            for name, p in doc["partitions"].items()
        }
        return StudyPlan(partitions, model, features, doc.get("seed", 0),
                         doc.get("aggregate"), doc.get("include_zero_support", False),
                         doc.get("folds", 5))


@dataclass
class StudyResult:
    contexts: list
    reports: list
    aggregated: list
    predictions: dict
    timing: dict
    kind_means: dict


def _load_study_partitions(plan: StudyPlan):
    partitions = []
    schema = None
    missing = []
    for name in sorted(plan.partitions):
        path = Path(plan.partitions[name])
        if not (path / "manifest.json").exists():
            missing.append(str(path))
            continue
        part, part_schema = load_partition(path)
        if schema is not None and part_schema.hash != schema.hash:
            raise SchemaMismatchError(
                f"partition {name} uses schema {part_schema.hash}, expected {schema.hash}"
            )
        schema = part_schema
        partitions.append(part)
    if missing:
        raise GemidError("study plan references missing partitions: " + ", ".join(missing))
    return partitions, schema


def run_study(plan: StudyPlan, threads: int = 1) -> StudyResult:
    partitions, schema = _load_study_partitions(plan)
    tables = TableSet(partitions, list(schema.active_names))
    if plan.features:
        unknown = [f for f in plan.features if f not in schema.active_names]
        if unknown:
            raise GemidError(f"features not in the stores' schema: {unknown}")
        tables = tables.restrict(list(plan.features))
    contexts = build_contexts(partitions, folds=plan.folds)

    reports, aggregated, predictions, timing = [], [], {}, {}
    for ctx in contexts:
        report, preds, model = evaluate_context(
            ctx, plan.model, tables, plan.seed, plan.include_zero_support, threads)
        reports.append(report)
        predictions[ctx.name] = preds
        test_tbl = tables[(ctx.test or ctx.train).name]
        timing[ctx.name] = time_inference(model, test_tbl.X, repetitions=5)
        if plan.aggregate:
            aggregated.append(aggregated_report(
                report, preds, AggregationConfig(plan.aggregate),
                plan.include_zero_support))

    kind_means = {}
    for kind in (CV, "SS", DD):
        rows = [r for r in reports if r.kind == kind]
        if rows:
            kind_means[kind] = {
                "accuracy": float(np.mean([r.scores.accuracy for r in rows])),
                "kappa": float(np.mean([r.scores.kappa for r in rows])),
                "macro_f1": float(np.mean([r.scores.macro_f1 for r in rows])),
            }
    return StudyResult(contexts, reports, aggregated, predictions, timing, kind_means)


def _safe(name: str) -> str:
    return name.replace("|", "_vs_").replace("/", "_")


def write_study_artifacts(result: StudyResult, plan: StudyPlan, out_dir,
                          figures: bool = True) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    header = ["kind", "context", "accuracy", "kappa", "macro_f1", "n_test"]
    rows = []
    for kind in (CV, "SS", DD):
        kind_rows = [r for r in result.reports if r.kind == kind]
        rows.extend(r.row() for r in kind_rows)
        if kind_rows:
            m = result.kind_means[kind]
            rows.append([kind, "Mean", m["accuracy"], m["kappa"], m["macro_f1"],
                         sum(r.n_test for r in kind_rows)])
    write_csv(out / "table1.csv", header, rows)

    dd_reports = [r for r in result.reports if r.kind == DD]
    if dd_reports:
        union = sorted(set().union(*(set(r.scores.per_class) for r in dd_reports)))
        per_dev_rows = []
        for cls in union:
            row = [cls]
            for r in dd_reports:
                entry = r.scores.per_class.get(cls)
                row.append(entry["f1"] if entry is not None else None)
            per_dev_rows.append(row)
        per_dev_rows.append(["Mean accuracy"] + [r.scores.accuracy for r in dd_reports])
        per_dev_rows.append(["Mean F1 score"] + [r.scores.macro_f1 for r in dd_reports])
        write_csv(out / "table2_per_device.csv",
                  ["device"] + [r.name for r in dd_reports], per_dev_rows)

    for report in result.reports:
        h, rws = report.confusion.to_rows()
        write_csv(out / f"confusion_{_safe(report.name)}.csv", h, rws)

    for name, preds in result.predictions.items():
        write_csv(
            out / f"predictions_{_safe(name)}.csv",
            ["source_key", "session", "ts", "true", "predicted"]
            + [f"proba_{c}" for c in preds.classes],
            [
                [preds.source_key[i], preds.session[i], float(preds.ts[i]),
                 preds.classes[preds.true_codes[i]], preds.classes[preds.pred_codes[i]]]
                + [float(v) for v in preds.proba[i]]
                for i in range(len(preds))
            ],
        )

    suite = {
        "model": {"algorithm": plan.model.algorithm,
                  "hyperparameters": plan.model.hyperparameters},
        "features": list(plan.features) if plan.features else None,
        "seed": plan.seed,
        "kind_means": result.kind_means,
        "contexts": [r.to_dict() for r in result.reports],
        "aggregated": [r.to_dict() for r in result.aggregated],
    }
    with open(out / "suite_report.json", "w") as fh:
        json.dump(suite, fh, indent=1, sort_keys=True)
        fh.write("\n")

    # wall-clock measurements are intentionally kept out of suite_report.json
    # so the scored artifacts stay byte-reproducible
    with open(out / "timing.json", "w") as fh:
        json.dump(result.timing, fh, indent=1, sort_keys=True)
        fh.write("\n")

    if plan.aggregate:
        write_csv(out / "aggregated_table.csv",
                  ["kind", "context", "granularity", "accuracy", "kappa",
                   "macro_f1", "n_groups"],
                  [[r.kind, r.name, r.granularity, r.scores.accuracy,
                    r.scores.kappa, r.scores.macro_f1, r.n_test]
                   for r in result.aggregated])
        sweep_rows = []
        for g in (1, 2, 3, 6, 12, 24):
            cfg = AggregationConfig(g)
            for report in result.reports:
                if report.kind != DD:
                    continue
                agg = aggregated_report(report, result.predictions[report.name], cfg,
                                        plan.include_zero_support)
                sweep_rows.append([g, report.name, agg.scores.macro_f1])
        write_csv(out / "aggregation_sweep.csv",
                  ["group_size", "context", "macro_f1"], sweep_rows)

    with open(out / "resolved_config.json", "w") as fh:
        json.dump({
            "partitions": {k: str(v) for k, v in sorted(plan.partitions.items())},
            "model": {"algorithm": plan.model.algorithm,
                      "hyperparameters": plan.model.hyperparameters},
            "features": list(plan.features) if plan.features else None,
            "seed": plan.seed,
            "aggregate": plan.aggregate,
            "include_zero_support": plan.include_zero_support,
            "folds": plan.folds,
        }, fh, indent=1, sort_keys=True)
        fh.write("\n")

    if figures:
        from . import figures as figs

        figs.study_scores_figure(result.reports, result.kind_means,
                                 out / "study_scores.png")
        if dd_reports:
            figs.per_device_figure(dd_reports, out / "per_device.png")
