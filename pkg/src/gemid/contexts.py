"""Evaluation contexts: CV folds within a partition, session-vs-session
pairs inside one dataset family, and dataset-vs-dataset pairs across
families.  SS/DD pairs assert record-id disjointness at construction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GemidError, LeakageError
from .ingest import Partition
from .util import derive_seed

CV, SS, DD = "CV", "SS", "DD"


@dataclass(frozen=True)
class EvalContext:
    kind: str
    name: str
    train: Partition
    test: Partition | None = None  # None for CV
    folds: int = 5

    def __post_init__(self):
        if self.kind not in (CV, SS, DD):
            raise GemidError(f"unknown context kind {self.kind!r}")
        if self.kind == CV:
            if self.test is not None:
                raise GemidError("CV context takes a single partition")
        else:
            if self.test is None:
                raise GemidError(f"{self.kind} context needs a test partition")
            train_ids = {r.uid for r in self.train.records}
            test_ids = {r.uid for r in self.test.records}
            overlap = train_ids & test_ids
            if overlap:
                raise LeakageError(
                    f"{self.name}: {len(overlap)} record ids on both sides"
                )

    @property
    def partitions(self) -> tuple[Partition, ...]:
        return (self.train,) if self.test is None else (self.train, self.test)


def build_contexts(partitions, folds: int = 5) -> list[EvalContext]:
    """All contexts induced by the partitions' family/session manifest
    fields: one CV per partition, ordered same-family pairs as SS, ordered
    cross-family pairs as DD.

    The canonical two-family, two-session layout yields 4 + 4 + 8 = 16.
    """
    partitions = list(partitions)
    names = [p.name for p in partitions]
    if len(names) != len(set(names)):
        raise GemidError(f"duplicate partition names: {names}")
    if not partitions:
        raise GemidError("no partitions given")

    contexts = [EvalContext(CV, f"CV|{p.name}", p, folds=folds) for p in partitions]
    for p in partitions:
        for q in partitions:
            if p.name == q.name or p.family != q.family:
                continue
            if p.session == q.session:
                raise GemidError(
                    f"partitions {p.name} and {q.name} share family and session"
                )
            contexts.append(EvalContext(SS, f"{p.name}|{q.name}", p, q))
    for p in partitions:
        for q in partitions:
            if p.family != q.family:
                contexts.append(EvalContext(DD, f"{p.name}|{q.name}", p, q))
    return contexts


def dd_contexts(contexts) -> list[EvalContext]:
    return [c for c in contexts if c.kind == DD]


def fold_indices(n: int, folds: int, seed: int, name: str = "") -> list:
    """Deterministic shuffled fold split: list of (train_idx, test_idx)."""
    rng = np.random.default_rng(derive_seed(seed, "folds", name, n, folds))
    perm = rng.permutation(n)
    chunks = np.array_split(perm, folds)
    out = []
    for i in range(folds):
        test = np.sort(chunks[i])
        train = np.sort(np.concatenate([chunks[j] for j in range(folds) if j != i]))
        out.append((train, test))
    return out
