"""In-memory feature matrix over partition records.

Holds float64 values with NaN as the missing sentinel, integer-coded
labels, and provenance columns.  Histogram bins for tree training are
computed lazily per column and shared by row or column subsets, so fold
and feature-mask training reuse one binning of the data.
"""

from __future__ import annotations

import threading

import numpy as np

from .errors import GemidError

MAX_EDGES = 254  # value codes 0..E plus one missing code fit in uint8


class FeatureTable:
    def __init__(self, feature_names, X, y, classes, meta=None, bins=None):
        self.feature_names = tuple(feature_names)
        self.X = X
        self.y = y
        self.classes = tuple(classes)
        self.meta = meta if meta is not None else {}
        self._bins = bins  # list of per-column edge arrays, or None
        self._codes = None
        self._lock = threading.Lock()

    # ------------------------------------------------------------------
    @staticmethod
    def from_partitions(partitions, feature_names, classes=None) -> "FeatureTable":
        records = [r for p in partitions for r in p.records]
        if classes is None:
            classes = sorted({r.label for r in records})
        class_index = {c: i for i, c in enumerate(classes)}
        n, f = len(records), len(feature_names)
        X = np.full((n, f), np.nan, dtype=np.float64)
        y = np.zeros(n, dtype=np.int32)
        for i, r in enumerate(records):
            for j, v in enumerate(r.values):
                if v is not None:
                    X[i, j] = float(v)
            y[i] = class_index[r.label]
        meta = {
            "partition": [r.partition for r in records],
            "session": [r.session for r in records],
            "source_key": [r.source_key for r in records],
            "ts": np.array([r.ts for r in records], dtype=np.float64),
            "uid": [r.uid for r in records],
        }
        return FeatureTable(feature_names, X, y, classes, meta)

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def labels(self):
        return [self.classes[i] for i in self.y]

    # ------------------------------------------------------------------
    def rows(self, indices) -> "FeatureTable":
        """Row subset sharing this table's binning (fold training)."""
        indices = np.asarray(indices)
        meta = {}
        for k, v in self.meta.items():
            if isinstance(v, np.ndarray):
                meta[k] = v[indices]
            else:
                meta[k] = [v[i] for i in indices]
        sub = FeatureTable(self.feature_names, self.X[indices], self.y[indices],
                           self.classes, meta, bins=self.bins())
        if self._codes is not None:
            sub._codes = self._codes[indices]
        return sub

    def select(self, names) -> "FeatureTable":
        """Column subset sharing per-column binning."""
        index = {n: j for j, n in enumerate(self.feature_names)}
        missing = [n for n in names if n not in index]
        if missing:
            raise GemidError(f"unknown features: {missing}")
        cols = np.array([index[n] for n in names], dtype=np.intp)
        bins = self.bins()
        sub = FeatureTable(tuple(names), self.X[:, cols], self.y, self.classes,
                           self.meta, bins=[bins[c] for c in cols])
        if self._codes is not None:
            sub._codes = np.ascontiguousarray(self._codes[:, cols])
        return sub

    # ------------------------------------------------------------------
    def bins(self) -> list:
        """Per-column sorted split-candidate thresholds (midpoints)."""
        if self._bins is None:
            with self._lock:
                if self._bins is None:
                    self._bins = [_column_edges(self.X[:, j]) for j in range(self.n_features)]
        return self._bins

    def codes(self) -> np.ndarray:
        """uint8 bin codes; per column, missing maps to len(edges) + 1."""
        if self._codes is None:
            with self._lock:
                if self._codes is None:
                    bins = self._bins or [
                        _column_edges(self.X[:, j]) for j in range(self.n_features)
                    ]
                    self._bins = bins
                    codes = np.empty(self.X.shape, dtype=np.uint8)
                    for j, edges in enumerate(bins):
                        col = self.X[:, j]
                        c = np.searchsorted(edges, col, side="left")
                        c[np.isnan(col)] = len(edges) + 1
                        codes[:, j] = c
                    self._codes = codes
        return self._codes


def _column_edges(col: np.ndarray) -> np.ndarray:
    finite = col[~np.isnan(col)]
    if finite.size == 0:
        return np.empty(0, dtype=np.float64)
    uniques = np.unique(finite)
    if uniques.size > MAX_EDGES + 1:
        qs = np.linspace(0.0, 1.0, MAX_EDGES + 2)
        uniques = np.unique(np.quantile(uniques, qs))
    return (uniques[:-1] + uniques[1:]) / 2.0
