"""Two-stage feature selection validated across heterogeneous partitions.

Stage one scores every feature alone in every evaluation context with a
small decision tree and Cohen's kappa, then applies a vote rule: a feature
advances iff it earns at least `vote_quota` votes (kappa >= cut) from
either the DD or the SS contexts, with at least one DD vote.  CV votes are
tallied for reporting but never used for selection, because in-partition
folds systematically overestimate feature utility.

Stage two runs an independent genetic-algorithm wrapper per DD case over
the surviving candidates (decision-tree fitness on that case), groups
features by how many of the per-case subsets contain them (Vote+k), then
cross-evaluates every per-case subset and every Vote+k group on all DD
cases and keeps the set with the best mean macro F1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .contexts import CV, DD, SS, EvalContext, build_contexts, dd_contexts, fold_indices
from .errors import GemidError
from .metrics import ConfusionMatrix, kappa, macro_f1
from .models import ModelSpec, train
from .table import FeatureTable
from .util import derive_seed, ordered_map, write_csv


@dataclass(frozen=True)
class GaConfig:
    population: int = 50
    generations: int = 30
    tournament: int = 3
    crossover_rate: float = 0.6
    mutation_rate: float | None = None  # None -> 1/L
    elitism: int = 1


@dataclass(frozen=True)
class SelectionConfig:
    kappa_cut: float = 0.05
    vote_quota: int = 4
    min_dd_votes: int = 1
    scan_criterion: str = "entropy"
    scan_max_depth: int = 14
    folds: int = 5
    ga: GaConfig = field(default_factory=GaConfig)
    seed: int = 0

    @staticmethod
    def from_json(path) -> "SelectionConfig":
        with open(path) as fh:
            doc = json.load(fh)
        ga = GaConfig(**doc.pop("ga", {}))
        return SelectionConfig(ga=ga, **doc)

    def scan_spec(self) -> ModelSpec:
        return ModelSpec("DT", {"criterion": self.scan_criterion,
                                "max_depth": self.scan_max_depth})


class TableSet:
    """One FeatureTable per partition over a shared class vocabulary."""

    def __init__(self, partitions, feature_names):
        self.feature_names = tuple(feature_names)
        self.classes = tuple(sorted(set().union(*(p.class_set for p in partitions))))
        self.tables = {
            p.name: FeatureTable.from_partitions([p], self.feature_names, self.classes)
            for p in partitions
        }

    def __getitem__(self, name: str) -> FeatureTable:
        return self.tables[name]

    def restrict(self, names) -> "TableSet":
        """Column-restricted view over the same partitions and classes."""
        out = object.__new__(TableSet)
        out.feature_names = tuple(names)
        out.classes = self.classes
        out.tables = {k: t.select(names) for k, t in self.tables.items()}
        return out

    def pairs_for(self, ctx: EvalContext, seed: int) -> list:
        """(train, test) table pairs: one per SS/DD context, one per CV fold."""
        if ctx.kind == CV:
            table = self.tables[ctx.train.name]
            return [
                (table.rows(tr), table.rows(te))
                for tr, te in fold_indices(len(table), ctx.folds, seed, ctx.name)
            ]
        return [(self.tables[ctx.train.name], self.tables[ctx.test.name])]


def _fit_scores(train_tbl: FeatureTable, test_tbl: FeatureTable, spec: ModelSpec,
                seed: int = 0) -> tuple[float, float]:
    """(kappa, macro F1) of a model trained on one table, tested on another."""
    model = train(spec, train_tbl, seed=seed)
    pred = model.predict_codes(test_tbl.X)
    k = len(train_tbl.classes)
    counts = np.bincount(test_tbl.y * k + pred, minlength=k * k).reshape(k, k)
    cm = ConfusionMatrix(train_tbl.classes, counts)
    return kappa(cm), macro_f1(cm)


# ----------------------------------------------------------------------
# stage one: univariate scan + vote filter
# ----------------------------------------------------------------------

@dataclass
class KappaTable:
    features: tuple[str, ...]
    context_names: tuple[str, ...]
    context_kinds: tuple[str, ...]
    values: np.ndarray  # feature x context

    def columns(self, kind: str) -> np.ndarray:
        mask = [k == kind for k in self.context_kinds]
        return self.values[:, mask]


def univariate_scan(features, contexts, tables: TableSet, cfg: SelectionConfig,
                    threads: int = 1) -> KappaTable:
    """Kappa of a single-feature decision tree for every (feature, context);
    CV cells are the mean over folds."""
    if not contexts:
        raise GemidError("univariate scan needs at least one context")
    spec = cfg.scan_spec()
    pairs_by_ctx = [tables.pairs_for(ctx, cfg.seed) for ctx in contexts]
    cells = [(fi, ci) for fi in range(len(features)) for ci in range(len(contexts))]

    def score_cell(cell):
        fi, ci = cell
        name = features[fi]
        vals = []
        for tr, te in pairs_by_ctx[ci]:
            kap, _ = _fit_scores(tr.select([name]), te.select([name]), spec)
            vals.append(kap)
        return float(np.mean(vals))

    flat = ordered_map(score_cell, cells, threads)
    values = np.array(flat, dtype=np.float64).reshape(len(features), len(contexts))
    return KappaTable(tuple(features), tuple(c.name for c in contexts),
                      tuple(c.kind for c in contexts), values)


@dataclass(frozen=True)
class VoteEntry:
    feature: str
    cv_votes: int
    ss_votes: int
    dd_votes: int
    selected: bool


@dataclass
class VoteTally:
    entries: tuple[VoteEntry, ...]

    @property
    def selected_features(self) -> tuple[str, ...]:
        return tuple(e.feature for e in self.entries if e.selected)


def vote_filter(kt: KappaTable, kappa_cut: float = 0.05, vote_quota: int = 4,
                min_dd_votes: int = 1) -> VoteTally:
    """Vote rule: (dd >= quota or ss >= quota) and dd >= min_dd.

    CV votes are informational only.
    """
    cv = kt.columns(CV) >= kappa_cut
    ss = kt.columns(SS) >= kappa_cut
    dd = kt.columns(DD) >= kappa_cut
    entries = []
    for i, feature in enumerate(kt.features):
        cv_v, ss_v, dd_v = int(cv[i].sum()), int(ss[i].sum()), int(dd[i].sum())
        selected = (dd_v >= vote_quota or ss_v >= vote_quota) and dd_v >= min_dd_votes
        entries.append(VoteEntry(feature, cv_v, ss_v, dd_v, selected))
    return VoteTally(tuple(entries))


# ----------------------------------------------------------------------
# stage two: per-case GA wrapper + intersection voting + cross-evaluation
# ----------------------------------------------------------------------

@dataclass
class GaRunResult:
    case: str
    candidates: tuple[str, ...]
    mask: np.ndarray
    trace: list[float]
    final_f1: float

    @property
    def features(self) -> tuple[str, ...]:
        return tuple(c for c, bit in zip(self.candidates, self.mask) if bit)


class _FitnessCache:
    def __init__(self, candidates, train_tbl, test_tbl, spec: ModelSpec):
        self.candidates = tuple(candidates)
        self.train_tbl = train_tbl
        self.test_tbl = test_tbl
        self.spec = spec
        self.cache: dict[bytes, float] = {}

    def _compute(self, mask: np.ndarray) -> float:
        names = [c for c, bit in zip(self.candidates, mask) if bit]
        _, f1 = _fit_scores(self.train_tbl.select(names), self.test_tbl.select(names),
                            self.spec)
        return f1

    def evaluate(self, population: np.ndarray, threads: int = 1) -> np.ndarray:
        keys = [row.tobytes() for row in population]
        todo, seen = [], set()
        for key, row in zip(keys, population):
            if key not in self.cache and key not in seen:
                seen.add(key)
                todo.append((key, row))
        results = ordered_map(lambda kr: self._compute(kr[1]), todo, threads)
        for (key, _), f1 in zip(todo, results):
            self.cache[key] = f1
        return np.array([self.cache[k] for k in keys], dtype=np.float64)


def ga_select(candidates, dd_case: EvalContext, tables: TableSet,
              cfg: SelectionConfig, seed: int, threads: int = 1) -> GaRunResult:
    """Genetic-algorithm wrapper over candidate bitmasks for one DD case.

    Tournament selection, uniform crossover, per-bit mutation (default
    1/L), single-slot elitism; empty masks are repaired by switching one
    random bit on.  Fitness is the macro F1 of a scan-configured decision
    tree trained on the case's train side with the masked features.
    """
    candidates = tuple(candidates)
    if not candidates:
        raise GemidError("GA needs a non-empty candidate list")
    if dd_case.kind != DD:
        raise GemidError(f"GA wrapper runs on DD cases, got {dd_case.kind}")

    ga = cfg.ga
    rng = np.random.default_rng(seed)
    L = len(candidates)
    mutation = ga.mutation_rate if ga.mutation_rate is not None else 1.0 / L
    fitness_fn = _FitnessCache(
        candidates, tables[dd_case.train.name], tables[dd_case.test.name],
        cfg.scan_spec())

    def repair(mask: np.ndarray) -> np.ndarray:
        if not mask.any():
            mask[int(rng.integers(0, L))] = True
        return mask

    pop = rng.integers(0, 2, size=(ga.population, L)).astype(bool)
    for row in pop:
        repair(row)
    fitness = fitness_fn.evaluate(pop, threads)
    trace = [float(fitness.max())]

    for _ in range(ga.generations):
        order = np.argsort(-fitness, kind="stable")
        pop, fitness = pop[order], fitness[order]
        children = [pop[i].copy() for i in range(ga.elitism)]
        while len(children) < ga.population:
            picks = []
            for _ in range(2):
                contenders = rng.integers(0, ga.population, size=ga.tournament)
                picks.append(pop[contenders[np.argmax(fitness[contenders])]].copy())
            a, b = picks
            if rng.random() < ga.crossover_rate:
                swap = rng.random(L) < 0.5
                a[swap], b[swap] = b[swap].copy(), a[swap].copy()
            for child in (a, b):
                child ^= rng.random(L) < mutation
                children.append(repair(child))
        pop = np.array(children[:ga.population])
        fitness = fitness_fn.evaluate(pop, threads)
        trace.append(float(fitness.max()))

    best = int(np.argmax(fitness))
    return GaRunResult(dd_case.name, candidates, pop[best].copy(), trace,
                       float(fitness[best]))


def ga_select_all(candidates, dd_cases, tables: TableSet, cfg: SelectionConfig,
                  threads: int = 1) -> list[GaRunResult]:
    """One independent GA run per DD case, seeded by case index."""
    return [
        ga_select(candidates, case, tables, cfg, derive_seed(cfg.seed, "ga", i), threads)
        for i, case in enumerate(dd_cases)
    ]


def intersection_vote(results) -> dict[int, tuple[str, ...]]:
    """Vote+k groups: features present in at least k of the per-case masks.

    Groups are nested by construction (Vote+k contains Vote+(k+1)).
    """
    if len(results) < 2:
        raise GemidError("intersection voting needs at least two GA results")
    candidates = results[0].candidates
    votes = np.zeros(len(candidates), dtype=int)
    for res in results:
        votes += res.mask.astype(int)
    return {
        k: tuple(c for c, v in zip(candidates, votes) if v >= k)
        for k in range(2, len(results) + 1)
    }


@dataclass
class CrossEvalRow:
    name: str
    features: tuple[str, ...]
    scores: tuple[float, ...]
    mean: float
    empty: bool


@dataclass
class CrossEval:
    case_names: tuple[str, ...]
    rows: tuple[CrossEvalRow, ...]


def cross_evaluate(feature_sets, dd_cases, tables: TableSet, cfg: SelectionConfig,
                   threads: int = 1) -> CrossEval:
    """Macro F1 of every named feature set on every DD case, plus row means.

    Empty sets (possible at high vote thresholds) score 0 and carry a flag.
    """
    spec = cfg.scan_spec()
    sets = list(feature_sets)
    if not sets:
        raise GemidError("nothing to cross-evaluate")

    cells = [(si, ci) for si in range(len(sets)) for ci in range(len(dd_cases))]

    def score(cell):
        si, ci = cell
        _, names = sets[si]
        if not names:
            return 0.0
        case = dd_cases[ci]
        _, f1 = _fit_scores(tables[case.train.name].select(names),
                            tables[case.test.name].select(names), spec)
        return f1

    flat = ordered_map(score, cells, threads)
    values = np.array(flat).reshape(len(sets), len(dd_cases))
    rows = tuple(
        CrossEvalRow(name, tuple(names), tuple(float(v) for v in values[i]),
                     float(values[i].mean()), not names)
        for i, (name, names) in enumerate(sets)
    )
    return CrossEval(tuple(c.name for c in dd_cases), rows)


@dataclass
class FinalSelection:
    name: str
    features: tuple[str, ...]
    mean_f1: float


def pick_final(cross: CrossEval) -> FinalSelection:
    """Best mean macro F1; ties prefer fewer features, then lower vote k."""

    def sort_key(row: CrossEvalRow):
        k = int(row.name.split("+", 1)[1]) if row.name.startswith("vote+") else 10 ** 6
        return (-row.mean, len(row.features), k, row.name)

    best = min(cross.rows, key=sort_key)
    return FinalSelection(best.name, best.features, best.mean)


# ----------------------------------------------------------------------
# orchestration + artifacts
# ----------------------------------------------------------------------

@dataclass
class SelectionResult:
    contexts: list
    kappa_table: KappaTable
    tally: VoteTally
    ga_results: list
    groups: dict
    cross: CrossEval
    final: FinalSelection


def run_selection(partitions, feature_names, cfg: SelectionConfig,
                  threads: int = 1) -> SelectionResult:
    families = {p.family for p in partitions}
    if len(families) < 2:
        raise GemidError(
            f"need partitions from >= 2 dataset families for DD contexts, got {sorted(families)}"
        )
    contexts = build_contexts(partitions, folds=cfg.folds)
    tables = TableSet(partitions, feature_names)

    kt = univariate_scan(feature_names, contexts, tables, cfg, threads)
    tally = vote_filter(kt, cfg.kappa_cut, cfg.vote_quota, cfg.min_dd_votes)
    candidates = tally.selected_features
    if not candidates:
        raise GemidError("vote filter selected no candidate features")

    cases = dd_contexts(contexts)
    ga_results = ga_select_all(candidates, cases, tables, cfg, threads)
    groups = intersection_vote(ga_results)

    named_sets = [(f"ga:{r.case}", r.features) for r in ga_results]
    named_sets += [(f"vote+{k}", groups[k]) for k in sorted(groups)]
    cross = cross_evaluate(named_sets, cases, tables, cfg, threads)
    final = pick_final(cross)
    return SelectionResult(contexts, kt, tally, ga_results, groups, cross, final)


def write_selection_artifacts(result: SelectionResult, cfg: SelectionConfig,
                              out_dir, figures: bool = True) -> None:
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    kt = result.kappa_table
    write_csv(out / "kappa_table.csv",
              ["feature"] + [f"{k}:{n}" for k, n in zip(kt.context_kinds, kt.context_names)],
              [[f] + [float(v) for v in kt.values[i]] for i, f in enumerate(kt.features)])

    write_csv(out / "votes.csv",
              ["feature", "cv_votes", "ss_votes", "dd_votes", "selected"],
              [[e.feature, e.cv_votes, e.ss_votes, e.dd_votes, int(e.selected)]
               for e in result.tally.entries])

    ga_doc = [
        {"case": r.case, "features": list(r.features),
         "mask": [int(b) for b in r.mask], "candidates": list(r.candidates),
         "fitness_trace": r.trace, "final_f1": r.final_f1}
        for r in result.ga_results
    ]
    with open(out / "ga_runs.json", "w") as fh:
        json.dump(ga_doc, fh, indent=1, sort_keys=True)
        fh.write("\n")

    write_csv(out / "cross_eval.csv",
              ["set", "n_features"] + list(result.cross.case_names) + ["mean", "empty"],
              [[r.name, len(r.features)] + list(r.scores) + [r.mean, int(r.empty)]
               for r in result.cross.rows])

    with open(out / "final_features.json", "w") as fh:
        json.dump({"set": result.final.name, "features": list(result.final.features),
                   "mean_f1": result.final.mean_f1}, fh, indent=1, sort_keys=True)
        fh.write("\n")

    with open(out / "selection_config.json", "w") as fh:
        json.dump(asdict(cfg), fh, indent=1, sort_keys=True)
        fh.write("\n")

    if figures:
        from . import figures as figs

        figs.kappa_scan_figure(kt, out / "kappa_scan.png")
        figs.vote_figure(result.tally, out / "votes.png")
        figs.ga_fitness_figure(result.ga_results, out / "ga_fitness.png")
        figs.cross_eval_figure(result.cross, out / "cross_eval.png")
