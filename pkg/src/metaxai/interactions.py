"""Partial dependence and Friedman's H-statistic.

PD functions are evaluated at observed rows (``eval_rows``) and averaged over
the rows of ``data``; every PD is centered over the evaluation rows before it
enters a statistic.

For a fitted :class:`BoostedEnsemble` the average over data rows is computed
per tree from leaf weights: a substituted row lands in leaf ``l`` exactly when
the substituted values satisfy the leaf's conditions on the subset and the
data row satisfies the remaining ones, so
``mean_r tree(z, x_r) = sum_l value_l * [z fits l] * share of rows fitting l``.
This equals brute-force substitution up to floating-point summation order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Callable, Sequence

import numba
import numpy as np

from .errors import MetaXAIError
from .surrogate import BoostedEnsemble, as_predictor

DEFAULT_EVAL_CAP = 500
ZERO_DENOMINATOR = 1e-12


@dataclass
class PdFunction:
    feature_subset: tuple
    support_points: np.ndarray
    values: np.ndarray
    raw: np.ndarray


@dataclass(frozen=True)
class HStatRecord:
    features: tuple
    h_squared: float
    kind: str
    flag: str = ""
    groups: tuple = ()

    @property
    def h(self) -> float:
        return math.sqrt(max(self.h_squared, 0.0))

    @property
    def name(self) -> str:
        return ":".join(self.features)


def eval_subsample(n: int, cap: int | None = DEFAULT_EVAL_CAP, seed: int = 0) -> np.ndarray:
    """Sorted row indices: all rows when ``n <= cap``, else a seeded sample of ``cap``."""
    if cap is None or n <= cap:
        return np.arange(n)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=cap, replace=False))


@numba.njit(cache=True)
def _pd_kernel(Z, D, in_subset, roots, feature, threshold, left, value, base, rate):
    m = Z.shape[0]
    n = D.shape[0]
    total_nodes = feature.shape[0]
    weight = np.zeros(total_nodes)
    marginal = np.zeros(total_nodes)
    has_subset = np.zeros(total_nodes, np.bool_)
    stack = np.empty(total_nodes + 1, np.int64)
    acc = np.zeros(m)
    n_trees = roots.shape[0]
    for t in range(n_trees):
        root = roots[t]
        stop = roots[t + 1] if t + 1 < n_trees else total_nodes
        # leaf counts of data rows, splits on subset features left open
        for r in range(n):
            sp = 1
            stack[0] = root
            while sp > 0:
                sp -= 1
                node = stack[sp]
                f = feature[node]
                if f < 0:
                    weight[node] += 1.0
                elif in_subset[f]:
                    stack[sp] = left[node] + 1
                    stack[sp + 1] = left[node]
                    sp += 2
                else:
                    stack[sp] = left[node] + (D[r, f] >= threshold[node])
                    sp += 1
        # children are numbered after their parent, so a reverse sweep is bottom-up
        for k in range(stop - 1, root - 1, -1):
            f = feature[k]
            if f < 0:
                marginal[k] = value[k] * weight[k]
                has_subset[k] = False
            else:
                c = left[k]
                marginal[k] = marginal[c] + marginal[c + 1]
                has_subset[k] = in_subset[f] or has_subset[c] or has_subset[c + 1]
        # evaluation points decide only the subset splits; subset-free subtrees are summed up front
        for i in range(m):
            s = 0.0
            sp = 1
            stack[0] = root
            while sp > 0:
                sp -= 1
                node = stack[sp]
                if not has_subset[node]:
                    s += marginal[node]
                    continue
                f = feature[node]
                if in_subset[f]:
                    stack[sp] = left[node] + (Z[i, f] >= threshold[node])
                    sp += 1
                else:
                    stack[sp] = left[node] + 1
                    stack[sp + 1] = left[node]
                    sp += 2
            acc[i] += s
        for k in range(root, stop):
            weight[k] = 0.0
    out = np.empty(m)
    for i in range(m):
        out[i] = base + rate * (acc[i] / n)
    return out


def _raw_pd(model, data: np.ndarray, cols: Sequence[int], points: np.ndarray) -> np.ndarray:
    """Uncentered PD of columns ``cols`` at the rows of ``points``."""
    cols = list(cols)
    # PD depends on a point only through its subset values
    uniq, inverse = np.unique(points[:, cols], axis=0, return_inverse=True)
    if len(uniq) < len(points):
        reduced = np.zeros((len(uniq), points.shape[1]))
        reduced[:, cols] = uniq
        return _raw_pd_points(model, data, cols, reduced)[inverse.ravel()]
    return _raw_pd_points(model, data, cols, points)


def _raw_pd_points(model, data, cols, points):
    if isinstance(model, BoostedEnsemble):
        roots, feat, thr, left, _right, val = model._flatten()
        mask = np.zeros(data.shape[1], dtype=np.bool_)
        mask[list(cols)] = True
        return _pd_kernel(np.ascontiguousarray(points), np.ascontiguousarray(data), mask, roots, feat, thr,
                          left, val, float(model.base_score), float(model.learn_rate))
    predict = as_predictor(model)
    out = np.empty(len(points))
    mixed = data.copy()
    for i, z in enumerate(points):
        mixed[:, cols] = z[cols]
        out[i] = predict(mixed).mean()
    return out


def _resolve(names: Sequence[str], features) -> list[int]:
    out = []
    for f in features:
        if isinstance(f, (int, np.integer)):
            if not 0 <= f < len(names):
                raise MetaXAIError(f"feature index {f} out of range")
            out.append(int(f))
        elif f in names:
            out.append(names.index(f))
        else:
            raise MetaXAIError(f"feature {f!r} is not a model feature")
    return out


def _names(model, feature_names, p) -> tuple:
    if feature_names is not None:
        return tuple(feature_names)
    if isinstance(model, BoostedEnsemble):
        return model.feature_names
    return tuple(f"x{i}" for i in range(p))


def partial_dependence(model, data, subset, eval_rows=None, *, feature_names=None) -> PdFunction:
    """Centered PD of ``subset`` at ``data[eval_rows]``, averaging over all rows of ``data``."""
    data = np.asarray(data, dtype=float)
    names = _names(model, feature_names, data.shape[1])
    cols = _resolve(names, subset)
    if not cols:
        raise MetaXAIError("subset must be nonempty")
    rows = np.arange(len(data)) if eval_rows is None else np.asarray(eval_rows)
    if rows.size == 0:
        raise MetaXAIError("eval_rows must be nonempty")
    points = data[rows]
    raw = _raw_pd(model, data, cols, points)
    return PdFunction(tuple(names[c] for c in cols), points[:, cols], raw - raw.mean(), raw)


def _ratio(num: float, den: float) -> tuple[float, str]:
    if den < ZERO_DENOMINATOR:
        return 0.0, "undefined"
    h2 = num / den
    return h2, ("above_one" if h2 > 1.0 + 1e-9 else "")


class _PdCache:
    def __init__(self, model, data, rows, names):
        self.model, self.data, self.rows, self.names = model, data, rows, names
        self.points = data[rows]
        self._cache = {}

    def centered(self, cols) -> np.ndarray:
        key = tuple(sorted(cols))
        if key not in self._cache:
            raw = _raw_pd(self.model, self.data, list(key), self.points)
            self._cache[key] = raw - raw.mean()
        return self._cache[key]


def _pair(cache: _PdCache, j: int, k: int, groups) -> HStatRecord:
    j, k = sorted((j, k))
    pjk = cache.centered((j, k))
    resid = pjk - cache.centered((j,)) - cache.centered((k,))
    h2, flag = _ratio(float(np.sum(resid ** 2)), float(np.sum(pjk ** 2)))
    names = (cache.names[j], cache.names[k])
    return HStatRecord(names, h2, "pairwise", flag, tuple(groups(n) for n in names) if groups else ())


def _overall(cache: _PdCache, j: int, groups) -> HStatRecord:
    p = cache.data.shape[1]
    f = as_predictor(cache.model)(cache.points)
    f = f - f.mean()
    rest = [c for c in range(p) if c != j]
    resid = f - cache.centered((j,)) - (cache.centered(rest) if rest else 0.0)
    h2, flag = _ratio(float(np.sum(resid ** 2)), float(np.sum(f ** 2)))
    name = cache.names[j]
    return HStatRecord((name,), h2, "overall", flag, (groups(name),) if groups else ())


def h_statistic_pair(model, data, j, k, eval_rows=None, *, feature_names=None, groups=None) -> HStatRecord:
    """Share of the joint PD variance of features ``j`` and ``k`` not explained by their single PDs."""
    data = np.asarray(data, dtype=float)
    names = _names(model, feature_names, data.shape[1])
    j, k = _resolve(names, [j, k])
    if j == k:
        raise MetaXAIError("pairwise H needs two distinct features")
    rows = np.arange(len(data)) if eval_rows is None else np.asarray(eval_rows)
    return _pair(_PdCache(model, data, rows, names), j, k, groups)


def h_statistic_overall(model, data, j, eval_rows=None, *, feature_names=None, groups=None) -> HStatRecord:
    """Share of prediction variance left after removing the PD of ``j`` and the PD of all other features."""
    data = np.asarray(data, dtype=float)
    names = _names(model, feature_names, data.shape[1])
    (j,) = _resolve(names, [j])
    rows = np.arange(len(data)) if eval_rows is None else np.asarray(eval_rows)
    return _overall(_PdCache(model, data, rows, names), j, groups)


def _order(records):
    return sorted(records, key=lambda r: (r.flag == "undefined", -r.h_squared, r.name))


def overall_interactions(model, data, eval_rows=None, *, features=None, feature_names=None,
                         groups: Callable[[str], str] | None = None) -> list[HStatRecord]:
    data = np.asarray(data, dtype=float)
    names = _names(model, feature_names, data.shape[1])
    cols = _resolve(names, names if features is None else features)
    rows = np.arange(len(data)) if eval_rows is None else np.asarray(eval_rows)
    cache = _PdCache(model, data, rows, names)
    return _order(_overall(cache, j, groups) for j in cols)


def top_interactions(model, data, m: int = 15, feature_filter=None, eval_rows=None, *, features=None,
                     feature_names=None, groups: Callable[[str], str] | None = None) -> list[HStatRecord]:
    """The ``m`` strongest pairwise interactions among ``features`` (default: all).

    ``feature_filter`` is either a callable ``(name_a, name_b) -> bool`` or a
    pair of group labels, e.g. ``("Hyperparameter", "Statistical")``, which
    keeps only pairs spanning those two groups. Pairs with a vanishing joint
    PD are kept but ranked last.
    """
    if m < 1:
        raise MetaXAIError("m must be >= 1")
    data = np.asarray(data, dtype=float)
    names = _names(model, feature_names, data.shape[1])
    cols = _resolve(names, names if features is None else features)
    if feature_filter is not None and not callable(feature_filter):
        if groups is None:
            raise MetaXAIError("a group filter needs the groups mapping")
        wanted = sorted(feature_filter)

        def feature_filter(a, b):
            return sorted((groups(a), groups(b))) == wanted
    rows = np.arange(len(data)) if eval_rows is None else np.asarray(eval_rows)
    cache = _PdCache(model, data, rows, names)
    records = []
    for j, k in combinations(sorted(cols), 2):
        if feature_filter is not None and not feature_filter(names[j], names[k]):
            continue
        records.append(_pair(cache, j, k, groups))
    return _order(records)[:m]


def write_interactions_csv(records: Sequence[HStatRecord], path) -> None:
    lines = ["feature_a,feature_b,group_a,group_b,h_squared,h,flag"]
    for r in records:
        a = r.features[0]
        b = r.features[1] if len(r.features) > 1 else ""
        ga = r.groups[0] if r.groups else ""
        gb = r.groups[1] if len(r.groups) > 1 else ""
        lines.append(f"{a},{b},{ga},{gb},{format(r.h_squared, '.17g')},{format(r.h, '.17g')},{r.flag}")
    Path(path).write_text("\n".join(lines) + "\n")
