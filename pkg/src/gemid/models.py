"""Classifiers used across the pipeline: CART decision trees, bagged random
forests, brute-force KNN, Gaussian naive Bayes, and one-vs-rest logistic
regression, plus random-search hyperparameter optimization and portable
JSON model files.

All training is deterministic given (table, spec, seed); forests derive one
RNG stream per tree from the master seed, so thread counts never change
results.  Trees treat the missing sentinel (NaN) natively by routing it to
the majority child of each split; the other model families impute missing
cells with the training column mean.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import GemidError, SchemaMismatchError
from .table import FeatureTable
from .util import derive_seed, ordered_map

MODEL_FILE_VERSION = "1"
ALGORITHMS = ("DT", "RF", "KNN", "NB", "LR")


@dataclass(frozen=True)
class ModelSpec:
    algorithm: str
    hyperparameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise GemidError(f"unknown algorithm {self.algorithm!r}")

    def get(self, key, default=None):
        return self.hyperparameters.get(key, default)


@dataclass
class TrainedModel:
    spec: ModelSpec
    classes: tuple[str, ...]
    feature_names: tuple[str, ...]
    schema_hash: str
    seed: int
    core: object

    def predict_codes(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba_array(X), axis=1)

    def predict_proba_array(self, X: np.ndarray) -> np.ndarray:
        if X.shape[1] != len(self.feature_names):
            raise SchemaMismatchError(
                f"model expects {len(self.feature_names)} features, got {X.shape[1]}"
            )
        return self.core.proba(X)

    def predict(self, table) -> list:
        X = self._check(table)
        return [self.classes[i] for i in self.predict_codes(X)]

    def predict_proba(self, table) -> np.ndarray:
        return self.predict_proba_array(self._check(table))

    def _check(self, table) -> np.ndarray:
        if isinstance(table, FeatureTable):
            if table.feature_names != self.feature_names:
                raise SchemaMismatchError("table features do not match the trained schema")
            return table.X
        return np.asarray(table, dtype=np.float64)


# ----------------------------------------------------------------------
# CART decision tree on pre-binned columns
# ----------------------------------------------------------------------

class _Tree:
    __slots__ = ("feature", "threshold", "left", "right", "miss_left", "dist")

    def __init__(self, feature, threshold, left, right, miss_left, dist):
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right
        self.miss_left = miss_left
        self.dist = dist

    def proba(self, X: np.ndarray) -> np.ndarray:
        n = X.shape[0]
        cur = np.zeros(n, dtype=np.int32)
        if n == 0:
            return np.zeros((0, self.dist.shape[1]))
        active = np.flatnonzero(self.feature[cur] >= 0)
        while active.size:
            nodes = cur[active]
            x = X[active, self.feature[nodes]]
            go_left = x <= self.threshold[nodes]
            go_left = np.where(np.isnan(x), self.miss_left[nodes], go_left)
            cur[active] = np.where(go_left, self.left[nodes], self.right[nodes])
            active = active[self.feature[cur[active]] >= 0]
        return self.dist[cur]

    def to_doc(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "miss_left": self.miss_left.astype(int).tolist(),
            "dist": self.dist.tolist(),
        }

    @staticmethod
    def from_doc(doc: dict) -> "_Tree":
        return _Tree(
            np.asarray(doc["feature"], dtype=np.int32),
            np.asarray(doc["threshold"], dtype=np.float64),
            np.asarray(doc["left"], dtype=np.int32),
            np.asarray(doc["right"], dtype=np.int32),
            np.asarray(doc["miss_left"], dtype=bool),
            np.asarray(doc["dist"], dtype=np.float64),
        )


def _weighted_impurity(counts: np.ndarray, criterion: str) -> np.ndarray:
    """n * impurity for class-count vectors along the last axis."""
    n = counts.sum(axis=-1)
    if criterion == "gini":
        with np.errstate(divide="ignore", invalid="ignore"):
            out = n - (counts * counts).sum(axis=-1) / n
        return np.where(n > 0, out, 0.0)
    logs = np.zeros(counts.shape, dtype=np.float64)
    np.log2(counts, where=counts > 0, out=logs)
    with np.errstate(divide="ignore", invalid="ignore"):
        logn = np.where(n > 0, np.log2(np.maximum(n, 1.0)), 0.0)
    return (counts * (logn[..., None] - logs)).sum(axis=-1)


def _best_split_numpy(sub: np.ndarray, y_sub: np.ndarray, n_edges: np.ndarray,
                      k: int, criterion: str):
    """Best (candidate feature position, edge index) by exhaustive scan of
    the binned histogram; a split must beat its own feature's parent
    impurity (computed over that feature's non-missing rows).

    Returns (score, fpos, edge) or None.
    """
    fc = sub.shape[1]
    stride = 256
    combined = sub.astype(np.int64) * k + y_sub[None, :].T
    combined += np.arange(fc, dtype=np.int64) * (stride * k)
    hist = np.bincount(combined.ravel(), minlength=fc * stride * k)
    hist = hist.reshape(fc, stride, k)

    b = hist.shape[1]
    cum = np.cumsum(hist, axis=1)
    totals = cum[np.arange(fc), n_edges, :]  # value codes only, missing excluded
    left = cum
    right = totals[:, None, :] - left
    score = _weighted_impurity(left, criterion) + _weighted_impurity(right, criterion)
    nl = left.sum(axis=2)
    nr = right.sum(axis=2)
    parent = _weighted_impurity(totals, criterion)
    valid = ((nl > 0) & (nr > 0)
             & (np.arange(b)[None, :] < n_edges[:, None])
             & (score < parent[:, None] - 1e-12))
    score = np.where(valid, score, np.inf)
    flat = int(np.argmin(score))
    fpos, edge = divmod(flat, b)
    best = score.ravel()[flat]
    if not np.isfinite(best):
        return None
    return float(best), fpos, edge


try:  # optional JIT of the split scan; the numpy path is the reference
    from numba import njit as _njit

    @_njit(cache=True)
    def _imp_pair(left, tot, nl, nr, k, use_gini):
        if use_gini:
            sl = 0.0
            sr = 0.0
            for c in range(k):
                lv = left[c]
                rv = tot[c] - lv
                sl += lv * lv
                sr += rv * rv
            out = 0.0
            if nl > 0.0:
                out += nl - sl / nl
            if nr > 0.0:
                out += nr - sr / nr
            return out
        ln2 = 0.6931471805599453
        out = 0.0
        if nl > 0.0:
            logn = np.log(nl) / ln2
            for c in range(k):
                lv = left[c]
                if lv > 0.0:
                    out += lv * (logn - np.log(lv) / ln2)
        if nr > 0.0:
            logn = np.log(nr) / ln2
            for c in range(k):
                rv = tot[c] - left[c]
                if rv > 0.0:
                    out += rv * (logn - np.log(rv) / ln2)
        return out

    @_njit(cache=True)
    def _split_kernel(sub, y_sub, n_edges, k, use_gini):
        n, fc = sub.shape
        best_score = np.inf
        best_f = -1
        best_b = -1
        counts = np.zeros((257, k), dtype=np.float64)
        left = np.zeros(k, dtype=np.float64)
        tot = np.zeros(k, dtype=np.float64)
        for f in range(fc):
            e = n_edges[f]
            if e == 0:
                continue
            for bb in range(e + 2):
                for c in range(k):
                    counts[bb, c] = 0.0
            for i in range(n):
                counts[sub[i, f], y_sub[i]] += 1.0
            tot_n = 0.0
            for c in range(k):
                t = 0.0
                for bb in range(e + 1):
                    t += counts[bb, c]
                tot[c] = t
                tot_n += t
            if tot_n <= 0.0:
                continue
            if use_gini:
                ssq = 0.0
                for c in range(k):
                    ssq += tot[c] * tot[c]
                parent = tot_n - ssq / tot_n
            else:
                ln2 = 0.6931471805599453
                parent = 0.0
                logn = np.log(tot_n) / ln2
                for c in range(k):
                    if tot[c] > 0.0:
                        parent += tot[c] * (logn - np.log(tot[c]) / ln2)
            gate = parent - 1e-12
            for c in range(k):
                left[c] = 0.0
            nl = 0.0
            for bb in range(e):
                for c in range(k):
                    left[c] += counts[bb, c]
                nl = 0.0
                for c in range(k):
                    nl += left[c]
                nr = tot_n - nl
                if nl <= 0.0 or nr <= 0.0:
                    continue
                score = _imp_pair(left, tot, nl, nr, k, use_gini)
                if score < gate and score < best_score:
                    best_score = score
                    best_f = f
                    best_b = bb
        return best_score, best_f, best_b

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is available in CI
    _HAVE_NUMBA = False


def _best_split(sub: np.ndarray, y_sub: np.ndarray, n_edges: np.ndarray,
                k: int, criterion: str):
    if _HAVE_NUMBA:
        score, fpos, edge = _split_kernel(
            np.ascontiguousarray(sub), y_sub, n_edges.astype(np.int64), k,
            criterion == "gini")
        if fpos < 0:
            return None
        return float(score), int(fpos), int(edge)
    return _best_split_numpy(sub, y_sub, n_edges, k, criterion)


def _fit_tree(table: FeatureTable, params: dict, rng: np.random.Generator,
              sample_idx=None) -> _Tree:
    codes = table.codes()
    edges = table.bins()
    y = table.y
    if sample_idx is not None:
        codes = codes[sample_idx]
        y = y[sample_idx]
    n, n_feat = codes.shape
    k = len(table.classes)
    criterion = params.get("criterion", "gini")
    max_depth = int(params.get("max_depth", 32))
    min_split = int(params.get("min_samples_split", 2))
    max_features = params.get("max_features")
    if max_features == "sqrt":
        max_features = round(n_feat ** 0.5)
    if max_features is None or max_features >= n_feat:
        max_features = n_feat
    max_features = max(1, int(max_features))
    n_edges = np.array([len(e) for e in edges], dtype=np.int64)

    feature, threshold, left, right, miss_left, dist = [], [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        miss_left.append(False)
        dist.append(None)
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.arange(n, dtype=np.intp), 0)]
    y = y.astype(np.int64)
    all_features = np.arange(n_feat)

    while stack:
        node, idx, depth = stack.pop()
        y_sub = y[idx]
        counts = np.bincount(y_sub, minlength=k).astype(np.float64)
        dist[node] = counts / counts.sum()
        if depth >= max_depth or idx.size < min_split or np.count_nonzero(counts) <= 1:
            continue

        if max_features < n_feat:
            cand = np.sort(rng.choice(n_feat, size=max_features, replace=False))
        else:
            cand = all_features

        found = _best_split(codes[idx][:, cand], y_sub, n_edges[cand], k, criterion)
        if found is None:
            continue
        _, fpos, b = found
        f = int(cand[fpos])
        col = codes[idx, f]
        missing = col > n_edges[f]
        goes_left = col <= b
        n_left_nm = int(np.count_nonzero(goes_left & ~missing))
        n_right_nm = int(np.count_nonzero(~goes_left & ~missing))
        to_left = n_left_nm >= n_right_nm
        goes_left = np.where(missing, to_left, goes_left)

        left_idx = idx[goes_left]
        right_idx = idx[~goes_left]
        if left_idx.size == 0 or right_idx.size == 0:
            continue

        feature[node] = f
        threshold[node] = float(edges[f][b])
        miss_left[node] = to_left
        left_id = new_node()
        right_id = new_node()
        left[node] = left_id
        right[node] = right_id
        stack.append((right_id, right_idx, depth + 1))
        stack.append((left_id, left_idx, depth + 1))

    return _Tree(
        np.asarray(feature, dtype=np.int32),
        np.asarray(threshold, dtype=np.float64),
        np.asarray(left, dtype=np.int32),
        np.asarray(right, dtype=np.int32),
        np.asarray(miss_left, dtype=bool),
        np.asarray(dist, dtype=np.float64),
    )


class _Forest:
    def __init__(self, trees):
        self.trees = trees

    def proba(self, X: np.ndarray) -> np.ndarray:
        acc = self.trees[0].proba(X)
        for tree in self.trees[1:]:
            acc = acc + tree.proba(X)
        return acc / len(self.trees)

    def to_doc(self) -> dict:
        return {"trees": [t.to_doc() for t in self.trees]}

    @staticmethod
    def from_doc(doc: dict) -> "_Forest":
        return _Forest([_Tree.from_doc(t) for t in doc["trees"]])


# ----------------------------------------------------------------------
# KNN / NB / LR work on mean-imputed matrices
# ----------------------------------------------------------------------

def _column_means(X: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        means = np.nanmean(X, axis=0)
    return np.where(np.isnan(means), 0.0, means)


def _impute(X: np.ndarray, fill: np.ndarray) -> np.ndarray:
    out = np.array(X, dtype=np.float64, copy=True)
    nan = np.isnan(out)
    if nan.any():
        out[nan] = np.broadcast_to(fill, out.shape)[nan]
    return out


class _KNN:
    def __init__(self, Xs, y, k, weights, fill, lo, span, n_classes):
        self.Xs = Xs
        self.y = y
        self.k = k
        self.weights = weights
        self.fill = fill
        self.lo = lo
        self.span = span
        self.n_classes = n_classes

    @staticmethod
    def fit(table: FeatureTable, params: dict) -> "_KNN":
        fill = _column_means(table.X)
        X = _impute(table.X, fill)
        lo = X.min(axis=0)
        span = X.max(axis=0) - lo
        span[span == 0] = 1.0
        return _KNN((X - lo) / span, table.y.copy(),
                    int(params.get("k", 5)), params.get("weights", "uniform"),
                    fill, lo, span, len(table.classes))

    def proba(self, X: np.ndarray) -> np.ndarray:
        Xq = (_impute(X, self.fill) - self.lo) / self.span
        n = Xq.shape[0]
        k = min(self.k, self.Xs.shape[0])
        train_sq = (self.Xs * self.Xs).sum(axis=1)
        out = np.zeros((n, self.n_classes))
        for start in range(0, n, 256):
            chunk = Xq[start:start + 256]
            d2 = (chunk * chunk).sum(axis=1)[:, None] + train_sq - 2.0 * (chunk @ self.Xs.T)
            np.maximum(d2, 0.0, out=d2)
            order = np.argsort(d2, axis=1, kind="stable")[:, :k]
            for i in range(chunk.shape[0]):
                nbr = order[i]
                if self.weights == "distance":
                    w = 1.0 / (np.sqrt(d2[i, nbr]) + 1e-9)
                else:
                    w = np.ones(k)
                votes = np.bincount(self.y[nbr], weights=w, minlength=self.n_classes)
                out[start + i] = votes / votes.sum()
        return out

    def to_doc(self) -> dict:
        return {
            "X": self.Xs.tolist(), "y": self.y.tolist(), "k": self.k,
            "weights": self.weights, "fill": self.fill.tolist(),
            "lo": self.lo.tolist(), "span": self.span.tolist(),
            "n_classes": self.n_classes,
        }

    @staticmethod
    def from_doc(doc: dict) -> "_KNN":
        return _KNN(
            np.asarray(doc["X"]), np.asarray(doc["y"], dtype=np.int32), doc["k"],
            doc["weights"], np.asarray(doc["fill"]), np.asarray(doc["lo"]),
            np.asarray(doc["span"]), doc["n_classes"],
        )


class _GaussianNB:
    def __init__(self, theta, var, priors, fill):
        self.theta = theta
        self.var = var
        self.priors = priors
        self.fill = fill

    @staticmethod
    def fit(table: FeatureTable, params: dict) -> "_GaussianNB":
        fill = _column_means(table.X)
        X = _impute(table.X, fill)
        k = len(table.classes)
        n, f = X.shape
        theta = np.zeros((k, f))
        var = np.zeros((k, f))
        priors = np.zeros(k)
        for c in range(k):
            mask = table.y == c
            priors[c] = mask.sum() / n
            if mask.any():
                theta[c] = X[mask].mean(axis=0)
                var[c] = X[mask].var(axis=0)
        smoothing = float(params.get("var_smoothing", 1e-9))
        eps = smoothing * max(float(X.var(axis=0).max()), 1e-12)
        return _GaussianNB(theta, var + eps, priors, fill)

    def proba(self, X: np.ndarray) -> np.ndarray:
        Xq = _impute(X, self.fill)
        with np.errstate(divide="ignore"):
            log_prior = np.where(self.priors > 0, np.log(self.priors), -np.inf)
        ll = np.empty((Xq.shape[0], self.theta.shape[0]))
        for c in range(self.theta.shape[0]):
            diff = Xq - self.theta[c]
            ll[:, c] = (
                log_prior[c]
                - 0.5 * (np.log(2 * np.pi * self.var[c]) + diff * diff / self.var[c]).sum(axis=1)
            )
        ll -= ll.max(axis=1, keepdims=True)
        p = np.exp(ll)
        return p / p.sum(axis=1, keepdims=True)

    def to_doc(self) -> dict:
        return {"theta": self.theta.tolist(), "var": self.var.tolist(),
                "priors": self.priors.tolist(), "fill": self.fill.tolist()}

    @staticmethod
    def from_doc(doc: dict) -> "_GaussianNB":
        return _GaussianNB(*(np.asarray(doc[k]) for k in ("theta", "var", "priors", "fill")))


def lr_loss_grad(W: np.ndarray, b: np.ndarray, X: np.ndarray, T: np.ndarray, lam: float):
    """Mean one-vs-rest logistic loss with L2 on weights, plus gradients.

    T is the (n, k) 0/1 target matrix.  Exposed for finite-difference
    verification.
    """
    n = X.shape[0]
    Z = X @ W.T + b
    # log(1 + exp(z)) - t*z, computed stably
    loss = float(np.mean(np.logaddexp(0.0, Z) - T * Z) * T.shape[1])
    loss += 0.5 * lam * float((W * W).sum())
    P = 1.0 / (1.0 + np.exp(-np.clip(Z, -500, 500)))
    G = (P - T) / n
    gW = G.T @ X + lam * W
    gb = G.sum(axis=0)
    return loss, gW, gb


class _Logistic:
    def __init__(self, W, b, mu, sigma, fill):
        self.W = W
        self.b = b
        self.mu = mu
        self.sigma = sigma
        self.fill = fill

    @staticmethod
    def fit(table: FeatureTable, params: dict) -> "_Logistic":
        fill = _column_means(table.X)
        X = _impute(table.X, fill)
        mu = X.mean(axis=0)
        sigma = X.std(axis=0)
        sigma[sigma == 0] = 1.0
        Xs = (X - mu) / sigma
        n, f = Xs.shape
        k = len(table.classes)
        T = np.zeros((n, k))
        T[np.arange(n), table.y] = 1.0

        penalty = params.get("penalty", "L2")
        C = float(params.get("C", 1.0))
        lam = 0.0 if penalty in (None, "none") else 1.0 / (C * n)
        iters = int(params.get("max_iter", 400))

        W = np.zeros((k, f))
        b = np.zeros(k)
        # fixed step from a Lipschitz bound of the OvR logistic objective
        lipschitz = 0.25 * float((Xs * Xs).sum(axis=1).mean()) + lam + 0.25
        step = 1.0 / lipschitz
        for _ in range(iters):
            _, gW, gb = lr_loss_grad(W, b, Xs, T, lam)
            W -= step * gW
            b -= step * gb
        return _Logistic(W, b, mu, sigma, fill)

    def proba(self, X: np.ndarray) -> np.ndarray:
        Xs = (_impute(X, self.fill) - self.mu) / self.sigma
        Z = np.clip(Xs @ self.W.T + self.b, -500, 500)
        S = 1.0 / (1.0 + np.exp(-Z))
        totals = S.sum(axis=1, keepdims=True)
        uniform = np.full_like(S, 1.0 / S.shape[1])
        return np.where(totals > 0, S / np.where(totals == 0, 1.0, totals), uniform)

    def to_doc(self) -> dict:
        return {"W": self.W.tolist(), "b": self.b.tolist(), "mu": self.mu.tolist(),
                "sigma": self.sigma.tolist(), "fill": self.fill.tolist()}

    @staticmethod
    def from_doc(doc: dict) -> "_Logistic":
        return _Logistic(*(np.asarray(doc[k]) for k in ("W", "b", "mu", "sigma", "fill")))


# ----------------------------------------------------------------------
# training entry points
# ----------------------------------------------------------------------

def train(spec: ModelSpec, table: FeatureTable, seed: int = 0,
          schema_hash: str = "", threads: int = 1) -> TrainedModel:
    if table.n_features == 0:
        raise GemidError("cannot train with zero features")
    if len(np.unique(table.y)) < 2:
        raise GemidError("training table has a single class")

    params = dict(spec.hyperparameters)
    if spec.algorithm == "DT":
        core = _fit_tree(table, params, np.random.default_rng(derive_seed(seed, "dt")))
    elif spec.algorithm == "RF":
        n_estimators = int(params.get("n_estimators", 100))
        bootstrap = bool(params.get("bootstrap", True))
        n = len(table)

        def fit_one(i: int) -> _Tree:
            rng = np.random.default_rng(derive_seed(seed, "tree", i))
            sample = rng.integers(0, n, size=n) if bootstrap else None
            return _fit_tree(table, params, rng, sample_idx=sample)

        core = _Forest(ordered_map(fit_one, list(range(n_estimators)), threads))
    elif spec.algorithm == "KNN":
        core = _KNN.fit(table, params)
    elif spec.algorithm == "NB":
        core = _GaussianNB.fit(table, params)
    elif spec.algorithm == "LR":
        core = _Logistic.fit(table, params)
    else:  # pragma: no cover - guarded by ModelSpec
        raise GemidError(spec.algorithm)

    return TrainedModel(spec, table.classes, table.feature_names, schema_hash, seed, core)


_CORE_TYPES = {"DT": _Tree, "RF": _Forest, "KNN": _KNN, "NB": _GaussianNB, "LR": _Logistic}


def save_model(model: TrainedModel, path) -> None:
    doc = {
        "version": MODEL_FILE_VERSION,
        "algorithm": model.spec.algorithm,
        "hyperparameters": model.spec.hyperparameters,
        "classes": list(model.classes),
        "feature_names": list(model.feature_names),
        "schema_hash": model.schema_hash,
        "seed": model.seed,
        "structure": model.core.to_doc(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_model(path) -> TrainedModel:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise GemidError(f"{path}: unreadable model file: {exc}") from exc
    if doc.get("version") != MODEL_FILE_VERSION:
        raise GemidError(f"{path}: unsupported model file version {doc.get('version')!r}")
    spec = ModelSpec(doc["algorithm"], doc["hyperparameters"])
    core = _CORE_TYPES[doc["algorithm"]].from_doc(doc["structure"])
    return TrainedModel(spec, tuple(doc["classes"]), tuple(doc["feature_names"]),
                        doc["schema_hash"], doc["seed"], core)


# ----------------------------------------------------------------------
# random-search hyperparameter optimization
# ----------------------------------------------------------------------

def default_ranges(algorithm: str, n_features: int) -> dict:
    if algorithm == "DT":
        return {"criterion": ["gini", "entropy"], "max_depth": (1, 32),
                "max_features": (1, max(1, n_features)), "min_samples_split": (2, 10)}
    if algorithm == "RF":
        return {"criterion": ["gini", "entropy"], "max_depth": (1, 32),
                "max_features": (1, min(11, max(1, n_features))),
                "min_samples_split": (2, 11), "bootstrap": [True, False],
                "n_estimators": (1, 200)}
    if algorithm == "KNN":
        return {"k": (1, 64), "leaf_size": (1, 50), "weights": ["uniform", "distance"]}
    if algorithm == "NB":
        return {"var_smoothing": ("log", 1e-9, 1.0)}
    if algorithm == "LR":
        return {"C": ("log", 1e-5, 100.0), "penalty": ["none", "L2"]}
    raise GemidError(f"no ranges for {algorithm!r}")


def _draw_params(ranges: dict, rng: np.random.Generator) -> dict:
    params = {}
    for key in sorted(ranges):
        spec = ranges[key]
        if isinstance(spec, list):
            params[key] = spec[int(rng.integers(0, len(spec)))]
        elif isinstance(spec, tuple) and spec[0] == "log":
            lo, hi = np.log(spec[1]), np.log(spec[2])
            params[key] = float(np.exp(rng.uniform(lo, hi)))
        else:
            lo, hi = spec
            params[key] = int(rng.integers(lo, hi + 1))
    return params


def random_search(algorithm: str, ranges: dict, n_draws: int, eval_contexts,
                  tables, seed: int = 0, threads: int = 1):
    """Draw hyperparameters uniformly from the given ranges and score each
    draw by mean macro F1 over the evaluation contexts.

    Returns (best ModelSpec, trace); ties keep the earliest draw.  KNN's
    leaf_size is accepted for range compatibility but has no effect on the
    brute-force search.
    """
    from .study import context_macro_f1

    if n_draws < 1:
        raise GemidError("n_draws must be >= 1")
    if not eval_contexts:
        raise GemidError("random_search needs at least one evaluation context")

    trace = []
    best = None
    for i in range(n_draws):
        rng = np.random.default_rng(derive_seed(seed, "search", i))
        params = _draw_params(ranges, rng)
        spec = ModelSpec(algorithm, params)
        eval_seed = derive_seed(seed, "searcheval", i)
        scores = ordered_map(
            lambda ctx: context_macro_f1(ctx, spec, tables, seed=eval_seed),
            list(eval_contexts), threads)
        score = float(np.mean(scores))
        trace.append({"draw": i, "hyperparameters": params, "mean_macro_f1": score})
        if best is None or score > best[0]:
            best = (score, spec)
    return best[1], trace
