"""Gradient-boosted regression trees used as the meta-model.

Trees are grown by exact greedy search: every feature is bucketed by its
sorted unique values, so scanning the buckets of a node enumerates every
midpoint threshold between adjacent observed values. A row goes left when
``x[feature] < threshold``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numba
import numpy as np
from scipy.stats import rankdata

from ._parallel import parallel_map
from .errors import DimensionError, FoldError, MetaXAIError

# a split must remove this share of the node's sum of squared residuals;
# keeps rounding noise from splitting nodes whose residuals are already constant
MIN_GAIN = 1e-12


@dataclass(frozen=True)
class SurrogateParams:
    n_trees: int = 500
    learn_rate: float = 0.05
    max_depth: int | None = 10
    min_node: int = 5
    subsample: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.n_trees <= 10000:
            raise MetaXAIError(f"n_trees must lie in [1, 10000], got {self.n_trees}")
        if not 0 < self.learn_rate <= 1:
            raise MetaXAIError(f"learn_rate must lie in (0, 1], got {self.learn_rate}")
        if self.max_depth is not None and self.max_depth < 1:
            raise MetaXAIError(f"max_depth must be >= 1 or None, got {self.max_depth}")
        if self.min_node < 1:
            raise MetaXAIError(f"min_node must be >= 1, got {self.min_node}")
        if not 0 < self.subsample <= 1:
            raise MetaXAIError(f"subsample must lie in (0, 1], got {self.subsample}")

    def replace(self, **changes) -> "SurrogateParams":
        return SurrogateParams(**{**self.__dict__, **changes})


@dataclass(frozen=True)
class Tree:
    """Flat binary tree; ``feature == -1`` marks a leaf and ``right == left + 1``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def to_dict(self, node: int = 0) -> dict:
        f = int(self.feature[node])
        if f < 0:
            return {"value": float(self.value[node])}
        return {
            "feature": f,
            "threshold": float(self.threshold[node]),
            "left": self.to_dict(int(self.left[node])),
            "right": self.to_dict(int(self.right[node])),
        }

    @classmethod
    def from_dict(cls, root: dict) -> "Tree":
        # children are allocated as adjacent pairs, matching the builder layout
        nodes = [root]
        feature, threshold, left, value = [], [], [], []
        i = 0
        while i < len(nodes):
            node = nodes[i]
            if "feature" in node:
                feature.append(node["feature"])
                threshold.append(node["threshold"])
                left.append(len(nodes))
                value.append(0.0)
                nodes.extend((node["left"], node["right"]))
            else:
                feature.append(-1)
                threshold.append(0.0)
                left.append(-1)
                value.append(node["value"])
            i += 1
        left = np.array(left, dtype=np.int32)
        return cls(
            np.array(feature, dtype=np.int32), np.array(threshold, dtype=float),
            left, np.where(left >= 0, left + 1, -1).astype(np.int32), np.array(value, dtype=float),
        )

    def depth(self, node: int = 0) -> int:
        if self.feature[node] < 0:
            return 0
        return 1 + max(self.depth(int(self.left[node])), self.depth(int(self.right[node])))


@dataclass
class BoostedEnsemble:
    """``predict(x) = base_score + learn_rate * sum(tree(x) for tree in trees)``."""

    base_score: float
    trees: tuple
    learn_rate: float
    max_depth: int | None
    feature_names: tuple
    loss_history: tuple = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        self.trees = tuple(self.trees)
        self.feature_names = tuple(self.feature_names)
        self._flat = None

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def _flatten(self):
        if self._flat is None:
            offsets = np.cumsum([0] + [len(t.feature) for t in self.trees])
            if self.trees:
                feat = np.concatenate([t.feature for t in self.trees]).astype(np.int64)
                thr = np.concatenate([t.threshold for t in self.trees])
                val = np.concatenate([t.value for t in self.trees])
                left = np.concatenate([np.where(t.left >= 0, t.left + o, -1) for t, o in zip(self.trees, offsets)])
                right = np.concatenate([np.where(t.right >= 0, t.right + o, -1) for t, o in zip(self.trees, offsets)])
            else:
                feat = np.zeros(0, np.int64)
                thr = val = np.zeros(0)
                left = right = np.zeros(0, np.int64)
            self._flat = (offsets[:-1].astype(np.int64), feat, thr, left.astype(np.int64),
                          right.astype(np.int64), val)
        return self._flat

    def predict(self, X) -> np.ndarray | float:
        return predict(self, X)

    __call__ = predict

    def to_dict(self) -> dict:
        return {
            "base_score": float(self.base_score),
            "learn_rate": float(self.learn_rate),
            "max_depth": self.max_depth,
            "feature_names": list(self.feature_names),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoostedEnsemble":
        return cls(
            d["base_score"], tuple(Tree.from_dict(t) for t in d["trees"]),
            d["learn_rate"], d["max_depth"], tuple(d["feature_names"]),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, path) -> "BoostedEnsemble":
        return cls.from_dict(json.loads(Path(path).read_text()))


# ------------------------------------------------------------------ kernels


@numba.njit(cache=True)
def _grow_tree(codes, bin_vals, nbins, resid, rows, max_depth, min_node, min_gain):
    n = rows.shape[0]
    p = codes.shape[1]
    cap = 2 * n + 1
    feature = np.full(cap, -1, np.int32)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int32)
    right = np.full(cap, -1, np.int32)
    value = np.zeros(cap)

    maxb = bin_vals.shape[1]
    hsum = np.zeros(maxb)
    hcnt = np.zeros(maxb, np.int64)
    tmp = np.empty(n, np.int64)

    st_node = np.empty(cap, np.int64)
    st_start = np.empty(cap, np.int64)
    st_end = np.empty(cap, np.int64)
    st_depth = np.empty(cap, np.int64)
    sp = 0
    st_node[0], st_start[0], st_end[0], st_depth[0] = 0, 0, n, 0
    sp = 1
    n_nodes = 1

    while sp > 0:
        sp -= 1
        node, start, end, depth = st_node[sp], st_start[sp], st_end[sp], st_depth[sp]
        cnt = end - start
        total = 0.0
        sq = 0.0
        for i in range(start, end):
            total += resid[rows[i]]
            sq += resid[rows[i]] * resid[rows[i]]
        value[node] = total / cnt
        if (max_depth >= 0 and depth >= max_depth) or cnt < 2 * min_node:
            continue

        base = total * total / cnt
        best_gain = -1.0
        best_f = -1
        best_lo = -1
        best_hi = -1
        for f in range(p):
            nb = nbins[f]
            for b in range(nb):
                hsum[b] = 0.0
                hcnt[b] = 0
            for i in range(start, end):
                r = rows[i]
                b = codes[r, f]
                hsum[b] += resid[r]
                hcnt[b] += 1
            lc = 0
            ls = 0.0
            prev = -1
            for b in range(nb):
                if hcnt[b] == 0:
                    continue
                if prev >= 0:
                    rc = cnt - lc
                    if lc >= min_node and rc >= min_node:
                        rs = total - ls
                        gain = ls * ls / lc + rs * rs / rc - base
                        if gain > best_gain:
                            best_gain = gain
                            best_f = f
                            best_lo = prev
                            best_hi = b
                    elif rc < min_node:
                        break
                lc += hcnt[b]
                ls += hsum[b]
                prev = b

        if best_f < 0 or best_gain <= min_gain * sq:
            continue

        a = bin_vals[best_f, best_lo]
        c = bin_vals[best_f, best_hi]
        t = a + (c - a) / 2.0
        if not (t > a):
            t = c
        # stable partition: bucket <= best_lo goes left
        nl = 0
        for i in range(start, end):
            if codes[rows[i], best_f] <= best_lo:
                tmp[nl] = rows[i]
                nl += 1
        k = nl
        for i in range(start, end):
            if codes[rows[i], best_f] > best_lo:
                tmp[k] = rows[i]
                k += 1
        for i in range(cnt):
            rows[start + i] = tmp[i]

        feature[node] = best_f
        threshold[node] = t
        left[node] = n_nodes
        right[node] = n_nodes + 1
        # right pushed first so the left subtree is expanded first
        st_node[sp], st_start[sp], st_end[sp], st_depth[sp] = n_nodes + 1, start + nl, end, depth + 1
        sp += 1
        st_node[sp], st_start[sp], st_end[sp], st_depth[sp] = n_nodes, start, start + nl, depth + 1
        sp += 1
        n_nodes += 2

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy())


@numba.njit(cache=True)
def _predict_kernel(X, roots, feature, threshold, left, right, value, base, rate):
    # tree-major order keeps one small tree hot in cache; per-row sums still
    # accumulate trees in sequence, so batch and single-row results agree bitwise
    n = X.shape[0]
    acc = np.zeros(n)
    for t in range(roots.shape[0]):
        root = roots[t]
        for i in range(n):
            node = root
            f = feature[node]
            while f >= 0:
                # right child is always left + 1
                node = left[node] + (X[i, f] >= threshold[node])
                f = feature[node]
            acc[i] += value[node]
    out = np.empty(n)
    for i in range(n):
        out[i] = base + rate * acc[i]
    return out


@numba.njit(cache=True)
def _tree_values(X, roots, feature, threshold, left, value):
    n = X.shape[0]
    out = np.empty((roots.shape[0], n))
    for t in range(roots.shape[0]):
        for i in range(n):
            node = roots[t]
            f = feature[node]
            while f >= 0:
                node = left[node] + (X[i, f] >= threshold[node])
                f = feature[node]
            out[t, i] = value[node]
    return out


@numba.njit(cache=True)
def _predict_masked(X, roots, feature, threshold, left, value, recompute, cached, base, rate):
    n = X.shape[0]
    acc = np.zeros(n)
    for t in range(roots.shape[0]):
        if not recompute[t]:
            for i in range(n):
                acc[i] += cached[t, i]
            continue
        for i in range(n):
            node = roots[t]
            f = feature[node]
            while f >= 0:
                node = left[node] + (X[i, f] >= threshold[node])
                f = feature[node]
            acc[i] += value[node]
    out = np.empty(n)
    for i in range(n):
        out[i] = base + rate * acc[i]
    return out


def _bucketize(X: np.ndarray):
    n, p = X.shape
    uniques = [np.unique(X[:, f]) for f in range(p)]
    nbins = np.array([len(u) for u in uniques], dtype=np.int64)
    bin_vals = np.zeros((p, int(nbins.max()) if p else 1))
    codes = np.empty((n, p), dtype=np.int64)
    for f, u in enumerate(uniques):
        bin_vals[f, : len(u)] = u
        codes[:, f] = np.searchsorted(u, X[:, f])
    return codes, bin_vals, nbins


# ------------------------------------------------------------------ API


def _check_matrix(X, n_features: int | None = None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionError(f"expected a 2-d feature matrix, got shape {X.shape}")
    if n_features is not None and X.shape[1] != n_features:
        raise DimensionError(f"model expects {n_features} features, got {X.shape[1]}")
    if not np.isfinite(X).all():
        raise MetaXAIError("feature matrix contains NaN or infinite values")
    return X


def fit(X, y, params: SurrogateParams | None = None, feature_names: Sequence[str] | None = None,
        **overrides) -> BoostedEnsemble:
    """Fit a boosted ensemble of squared-error regression trees.

    Every round grows one tree on the current residuals of a seeded row
    subsample of size ``round(subsample * n)``.
    """
    params = (params or SurrogateParams()).replace(**overrides) if overrides else (params or SurrogateParams())
    X = _check_matrix(X)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if y.shape != (n,):
        raise DimensionError(f"targets have shape {y.shape}, expected ({n},)")
    if n < 2:
        raise MetaXAIError("need at least 2 rows to fit")
    if not np.isfinite(y).all():
        raise MetaXAIError("targets contain NaN or infinite values")
    names = tuple(feature_names) if feature_names is not None else tuple(f"x{i}" for i in range(p))
    if len(names) != p:
        raise DimensionError(f"{len(names)} feature names for {p} columns")

    if np.all(y == y[0]):
        return BoostedEnsemble(float(y[0]), (), params.learn_rate, params.max_depth, names, (0.0,))

    codes, bin_vals, nbins = _bucketize(X)
    base = float(np.mean(y))
    rng = np.random.default_rng(params.seed)
    m = max(1, int(round(params.subsample * n)))
    depth = -1 if params.max_depth is None else params.max_depth
    pred = np.full(n, base)
    trees = []
    history = [float(np.mean((y - pred) ** 2))]
    for _ in range(params.n_trees):
        resid = y - pred
        if m < n:
            rows = np.sort(rng.choice(n, size=m, replace=False)).astype(np.int64)
        else:
            rows = np.arange(n, dtype=np.int64)
        tree = Tree(*_grow_tree(codes, bin_vals, nbins, resid, rows, depth, params.min_node, MIN_GAIN))
        trees.append(tree)
        step = _predict_kernel(X, np.zeros(1, np.int64), tree.feature.astype(np.int64), tree.threshold,
                               tree.left.astype(np.int64), tree.right.astype(np.int64), tree.value, 0.0, 1.0)
        pred = pred + params.learn_rate * step
        history.append(float(np.mean((y - pred) ** 2)))
    return BoostedEnsemble(base, tuple(trees), params.learn_rate, params.max_depth, names, tuple(history))


def predict(model: BoostedEnsemble, X):
    """Predictions for a single feature vector (returns float) or a matrix."""
    X_arr = np.asarray(X, dtype=float)
    single = X_arr.ndim == 1
    if single:
        X_arr = X_arr[None, :]
    X_arr = _check_matrix(X_arr, model.n_features)
    roots, feat, thr, left, right, val = model._flatten()
    out = _predict_kernel(np.ascontiguousarray(X_arr), roots, feat, thr, left, right, val,
                          float(model.base_score), float(model.learn_rate))
    return float(out[0]) if single else out


def as_predictor(model) -> Callable[[np.ndarray], np.ndarray]:
    """Accept a fitted ensemble or any callable mapping a matrix to predictions."""
    if isinstance(model, BoostedEnsemble):
        return lambda X: predict(model, np.asarray(X, dtype=float).reshape(len(X), -1))
    if callable(model):
        return lambda X: np.asarray(model(np.asarray(X, dtype=float)), dtype=float)
    raise TypeError(f"cannot predict with {type(model).__name__}")


class CachedPredictor:
    """Predictions for modified copies of a fixed matrix.

    Per-tree outputs on the base matrix are stored once; a tree is re-evaluated
    only if it splits on one of the changed columns. Results are bitwise equal
    to :func:`predict` on the modified matrix.
    """

    def __init__(self, model: BoostedEnsemble, X):
        self.model = model
        self.X = _check_matrix(X, model.n_features)
        roots, feat, thr, left, _right, val = model._flatten()
        self.cached = _tree_values(np.ascontiguousarray(self.X), roots, feat, thr, left, val)
        self.uses = np.zeros((len(model.trees), model.n_features), dtype=bool)
        for t, tree in enumerate(model.trees):
            self.uses[t, tree.feature[tree.feature >= 0]] = True

    def predict(self, X_mod, changed: Sequence[int]) -> np.ndarray:
        X_mod = np.ascontiguousarray(X_mod, dtype=float)
        if X_mod.shape != self.X.shape:
            raise DimensionError("modified matrix must keep the base shape")
        roots, feat, thr, left, _right, val = self.model._flatten()
        recompute = self.uses[:, list(changed)].any(axis=1)
        return _predict_masked(X_mod, roots, feat, thr, left, val, recompute, self.cached,
                               float(self.model.base_score), float(self.model.learn_rate))


def feature_usage(model: BoostedEnsemble) -> dict[str, int]:
    """Number of splits on each feature across the ensemble."""
    counts = np.zeros(model.n_features, dtype=int)
    for t in model.trees:
        used = t.feature[t.feature >= 0]
        np.add.at(counts, used, 1)
    return dict(zip(model.feature_names, counts.tolist()))


# ------------------------------------------------------------------ metrics


def mse(pred, actual) -> float:
    pred = np.asarray(pred, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if pred.shape != actual.shape or pred.ndim != 1:
        raise DimensionError(f"length mismatch: {pred.shape} vs {actual.shape}")
    if pred.size == 0:
        raise DimensionError("mse of empty vectors")
    return float(np.mean((pred - actual) ** 2))


def spearman_flagged(pred, actual) -> tuple[float, bool]:
    """Spearman correlation and a flag set when either side has no rank variance.

    A degenerate pair reports a correlation of 0.
    """
    pred = np.asarray(pred, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if pred.shape != actual.shape or pred.ndim != 1:
        raise DimensionError(f"length mismatch: {pred.shape} vs {actual.shape}")
    if pred.size < 2:
        raise MetaXAIError("Spearman correlation needs at least 2 values")
    a = rankdata(pred)
    b = rankdata(actual)
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return 0.0, True
    a = a - a.mean()
    b = b - b.mean()
    rho = float(np.dot(a, b) / np.sqrt(np.dot(a, a) * np.dot(b, b)))
    return min(1.0, max(-1.0, rho)), False


def spearman(pred, actual) -> float:
    return spearman_flagged(pred, actual)[0]


# ------------------------------------------------------------------ LODO


@dataclass(frozen=True)
class FoldScore:
    dataset_id: str
    mse: float
    spearman: float
    degenerate: bool
    train_datasets: tuple = field(compare=False, repr=False)


@dataclass
class CvReport:
    folds: list

    @property
    def mean_mse(self) -> float:
        return float(np.mean([f.mse for f in self.folds]))

    @property
    def mean_spearman(self) -> float:
        return float(np.mean([f.spearman for f in self.folds]))

    def to_csv(self, path) -> None:
        lines = ["dataset_id,mse,spearman,degenerate_flag"]
        for f in self.folds:
            lines.append(f"{f.dataset_id},{format(f.mse, '.17g')},{format(f.spearman, '.17g')},{int(f.degenerate)}")
        Path(path).write_text("\n".join(lines) + "\n")


def _fold(args):
    data, dataset_id, params = args
    test = data.mask(dataset_id)
    if test.sum() < 2:
        raise FoldError(f"dataset {dataset_id} has fewer than 2 rows; Spearman undefined")
    train = data.subset(~test)
    model = fit(train.X, train.y, params, data.column_names)
    pred = predict(model, data.X[test])
    rho, degenerate = spearman_flagged(pred, data.y[test])
    score = FoldScore(dataset_id, mse(pred, data.y[test]), rho, degenerate, tuple(train.datasets))
    return score, model


def lodo_cv(data, params: SurrogateParams | None = None, jobs: int = 1):
    """Leave-one-dataset-out evaluation.

    Returns the :class:`CvReport` (sorted by dataset_id) and the fold models
    keyed by their held-out dataset.
    """
    params = params or SurrogateParams()
    datasets = data.datasets
    if len(datasets) < 2:
        raise MetaXAIError("leave-one-dataset-out needs at least 2 datasets")
    results = parallel_map(_fold, [(data, d, params) for d in datasets], jobs)
    report = CvReport([r[0] for r in results])
    return report, {d: r[1] for d, r in zip(datasets, results)}
