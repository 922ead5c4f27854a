"""Permutation importance for single features, feature groups and correlation clusters.

Dropout is ``mean(permuted loss) - baseline loss``. Each feature set draws its
permutations from a stream seeded by ``(seed, member names)``, so a singleton
group and the feature it contains see the same permutations.
"""
from __future__ import annotations

import json
import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.cluster.hierarchy import linkage
from scipy.spatial.distance import squareform
from scipy.stats import rankdata

from .errors import MetaXAIError
from .surrogate import BoostedEnsemble, CachedPredictor, as_predictor, mse

DEFAULT_B = 25


@dataclass
class ImportanceRecord:
    feature_set: tuple
    baseline_loss: float
    permuted_loss_mean: float
    permuted_loss_sd: float
    dropout: float
    replications: int
    constant: bool = False
    group: str = ""
    per_fold: dict = field(default_factory=dict)

    @property
    def name(self) -> str:
        return "+".join(self.feature_set)


def _names(model, feature_names) -> tuple:
    if feature_names is not None:
        return tuple(feature_names)
    if isinstance(model, BoostedEnsemble):
        return model.feature_names
    raise MetaXAIError("feature_names required for a plain callable model")


def permutation_stream(seed: int, members: Iterable[str], n: int, B: int) -> list[np.ndarray]:
    """The ``B`` row permutations used for feature set ``members``."""
    key = zlib.crc32("\x1f".join(sorted(members)).encode())
    rng = np.random.default_rng(np.random.SeedSequence([seed, key]))
    return [rng.permutation(n) for _ in range(B)]


def feature_set_importance(model, X, y, feature_sets: Sequence[Sequence[str]], *, feature_names=None,
                           B: int = DEFAULT_B, seed: int = 0,
                           loss: Callable = mse) -> list[ImportanceRecord]:
    """Dropout for each feature set, columns of a set permuted jointly. Input order is kept."""
    names = _names(model, feature_names)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if B < 1:
        raise MetaXAIError("B must be >= 1")
    if len(X) == 0:
        raise MetaXAIError("no rows to evaluate importance on")
    if isinstance(model, BoostedEnsemble):
        cached = CachedPredictor(model, X)
        predict_changed = cached.predict
    else:
        plain = as_predictor(model)

        def predict_changed(Xm, _cols):
            return plain(Xm)
    baseline = loss(predict_changed(X, []), y)
    records = []
    for members in feature_sets:
        members = tuple(members)
        if not members:
            raise MetaXAIError("empty feature set")
        unknown = [m for m in members if m not in names]
        if unknown:
            raise MetaXAIError(f"features not in model: {unknown}")
        cols = [names.index(m) for m in members]
        if all(np.all(X[:, c] == X[0, c]) for c in cols):
            records.append(ImportanceRecord(members, baseline, baseline, 0.0, 0.0, B, constant=True))
            continue
        drops = np.empty(B)
        Xp = X.copy()
        for b, perm in enumerate(permutation_stream(seed, members, len(X), B)):
            Xp[:, cols] = X[perm][:, cols]
            drops[b] = loss(predict_changed(Xp, cols), y) - baseline
        dropout = float(drops.mean())
        sd = float(drops.std(ddof=1)) if B > 1 else 0.0
        records.append(ImportanceRecord(members, baseline, baseline + dropout, sd, dropout, B))
    return records


def _sorted(records):
    return sorted(records, key=lambda r: (-r.dropout, r.name))


def permutation_importance(model, X, y, features: Sequence[str] | None = None, *, feature_names=None,
                           B: int = DEFAULT_B, seed: int = 0, loss: Callable = mse) -> list[ImportanceRecord]:
    """Single-feature permutation importance, sorted by descending dropout."""
    names = _names(model, feature_names)
    features = names if features is None else features
    return _sorted(feature_set_importance(model, X, y, [(f,) for f in features], feature_names=names,
                                          B=B, seed=seed, loss=loss))


def grouped_importance(model, X, y, groups: Mapping[str, Sequence[str]], *, feature_names=None,
                       B: int = DEFAULT_B, seed: int = 0, loss: Callable = mse) -> list[ImportanceRecord]:
    """Importance of each group, members permuted with one shared permutation.

    ``groups`` must partition the model's features.
    """
    names = _names(model, feature_names)
    seen: list[str] = []
    for g, members in groups.items():
        if not members:
            raise MetaXAIError(f"group {g!r} is empty")
        seen.extend(members)
    if sorted(seen) != sorted(names):
        dup = sorted({m for m in seen if seen.count(m) > 1})
        miss = sorted(set(names) - set(seen))
        raise MetaXAIError(f"groups do not partition the features (duplicated {dup}, missing {miss})")
    labels = list(groups)
    records = feature_set_importance(model, X, y, [tuple(groups[g]) for g in labels], feature_names=names,
                                     B=B, seed=seed, loss=loss)
    for g, r in zip(labels, records):
        r.group = g
    return _sorted(records)


def aggregate_importance(per_fold: Mapping[str, Sequence[ImportanceRecord]]) -> list[ImportanceRecord]:
    """Mean dropout per feature set across fold models; fold values kept in ``per_fold``."""
    folds = sorted(per_fold)
    by_set: dict[tuple, dict[str, ImportanceRecord]] = {}
    for fold in folds:
        for r in per_fold[fold]:
            by_set.setdefault(r.feature_set, {})[fold] = r
    baseline = float(np.mean([per_fold[f][0].baseline_loss for f in folds]))
    out = []
    for fs, recs in by_set.items():
        drops = np.array([recs[f].dropout for f in folds if f in recs])
        sd = float(drops.std(ddof=1)) if len(drops) > 1 else 0.0
        first = next(iter(recs.values()))
        out.append(ImportanceRecord(
            fs, baseline, baseline + float(drops.mean()), sd, float(drops.mean()), first.replications,
            constant=all(r.constant for r in recs.values()), group=first.group,
            per_fold={f: recs[f].dropout for f in folds if f in recs},
        ))
    return _sorted(out)


def write_importance_csv(records: Sequence[ImportanceRecord], path, group_of: Callable[[str], str] | None = None) -> None:
    lines = ["feature_set,group,baseline_loss,dropout_mean,dropout_sd,B"]
    for r in records:
        group = r.group or (group_of(r.feature_set[0]) if group_of and len(r.feature_set) == 1 else "")
        lines.append(",".join([
            r.name, group, format(r.baseline_loss, ".17g"), format(r.dropout, ".17g"),
            format(r.permuted_loss_sd, ".17g"), str(r.replications),
        ]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_importance_csv(path) -> list[dict]:
    rows = Path(path).read_text().splitlines()
    header = rows[0].split(",")
    return [dict(zip(header, r.split(","))) for r in rows[1:] if r]


# ------------------------------------------------------------------ triplot


@dataclass
class DendroNode:
    members: tuple
    height: float = 0.0
    left: "DendroNode | None" = None
    right: "DendroNode | None" = None
    importance: float | None = None
    importance_sd: float | None = None
    order: int = -1

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def walk(self):
        """Post-order traversal."""
        if not self.is_leaf:
            yield from self.left.walk()
            yield from self.right.walk()
        yield self

    def to_dict(self) -> dict:
        d = {"members": list(self.members), "height": self.height, "importance": self.importance}
        if self.importance_sd is not None:
            d["importance_sd"] = self.importance_sd
        if not self.is_leaf:
            d["order"] = self.order
            d["children"] = [self.left.to_dict(), self.right.to_dict()]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DendroNode":
        kids = d.get("children")
        return cls(
            tuple(d["members"]), d["height"],
            cls.from_dict(kids[0]) if kids else None, cls.from_dict(kids[1]) if kids else None,
            d.get("importance"), d.get("importance_sd"), d.get("order", -1),
        )


@dataclass
class Dendrogram:
    root: DendroNode
    excluded: tuple = ()

    @property
    def leaves(self) -> list[DendroNode]:
        return [n for n in self.root.walk() if n.is_leaf]

    @property
    def merges(self) -> list[DendroNode]:
        """Merge nodes in the order they were formed."""
        return sorted((n for n in self.root.walk() if not n.is_leaf), key=lambda n: n.order)

    def nodes(self) -> list[DendroNode]:
        return list(self.root.walk())

    def to_json(self, path) -> None:
        doc = self.root.to_dict()
        if self.excluded:
            doc = {**doc, "excluded": list(self.excluded)}
        Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")

    @classmethod
    def from_json(cls, path) -> "Dendrogram":
        d = json.loads(Path(path).read_text())
        return cls(DendroNode.from_dict(d), tuple(d.get("excluded", ())))


def correlation_matrix(X, method: str = "spearman") -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if method == "spearman":
        X = rankdata(X, axis=0)
    elif method != "pearson":
        raise MetaXAIError(f"unknown correlation method {method!r}")
    return np.corrcoef(X, rowvar=False)


def correlation_linkage(X, feature_names: Sequence[str], features: Sequence[str] | None = None,
                        method: str = "spearman") -> Dendrogram:
    """Complete-linkage clustering of features under ``1 - |correlation|``.

    Constant columns are dropped with a warning and listed in ``excluded``.
    """
    names = list(feature_names)
    features = list(names if features is None else features)
    X = np.asarray(X, dtype=float)
    cols = [names.index(f) for f in features]
    constant = [f for f, c in zip(features, cols) if np.all(X[:, c] == X[0, c])]
    if constant:
        warnings.warn(f"constant features excluded from clustering: {constant}", stacklevel=2)
    keep = [(f, c) for f, c in zip(features, cols) if f not in constant]
    if len(keep) < 2:
        raise MetaXAIError("need at least two non-constant features to cluster")
    labels = [f for f, _ in keep]
    corr = correlation_matrix(X[:, [c for _, c in keep]], method)
    dist = 1.0 - np.abs(corr)
    dist[dist < 1e-12] = 0.0
    dist = np.clip((dist + dist.T) / 2.0, 0.0, 1.0)
    np.fill_diagonal(dist, 0.0)
    Z = linkage(squareform(dist, checks=False), method="complete")

    nodes = [DendroNode((f,)) for f in labels]
    for order, (a, b, h, _) in enumerate(Z):
        left, right = nodes[int(a)], nodes[int(b)]
        nodes.append(DendroNode(left.members + right.members, float(h), left, right, order=order))
    return Dendrogram(nodes[-1], tuple(constant))


def triplot(model, X, y, features: Sequence[str] | None = None, *, feature_names=None,
            B: int = DEFAULT_B, seed: int = 0, method: str = "spearman",
            loss: Callable = mse, known: Sequence[ImportanceRecord] = ()) -> Dendrogram:
    """Correlation dendrogram with the joint permutation dropout of every node.

    ``known`` may hold records already computed with the same model, data, B
    and seed (e.g. single-feature importance); matching node sets reuse them.
    """
    names = _names(model, feature_names)
    tree = correlation_linkage(X, names, features, method)
    nodes = tree.nodes()
    reuse = {tuple(sorted(r.feature_set)): r for r in known if r.replications == B}
    todo = [n.members for n in nodes if tuple(sorted(n.members)) not in reuse]
    fresh = feature_set_importance(model, X, y, todo, feature_names=names, B=B, seed=seed, loss=loss)
    reuse.update({tuple(sorted(r.feature_set)): r for r in fresh})
    records = [reuse[tuple(sorted(n.members))] for n in nodes]
    for node, rec in zip(nodes, records):
        node.importance = rec.dropout
        node.importance_sd = rec.permuted_loss_sd
    return tree
