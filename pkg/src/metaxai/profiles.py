"""Ceteris Paribus profiles per dataset, profile clustering and warm starts.

A profile of dataset ``d`` comes from the leave-one-dataset-out model that
never saw ``d``, evaluated at a representative instance of ``d``: its
meta-features and landmarkers with the remaining hyperparameters at the
sampler defaults. ``mode="pd"`` instead averages the profiles of all rows of
``d``.
"""
from __future__ import annotations

import string
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.cluster.hierarchy import cut_tree, linkage

from .errors import MetaXAIError
from .meta_data import DEFAULT_CONFIG_VALUES, HYPERPARAMETER_COLUMNS, MetaDataset, fmt_float
from .surrogate import as_predictor

N_GRID = 51
LOG_FEATURES = ("shrinkage", "n.trees")
INTEGER_FEATURES = ("interaction.depth", "n.minobsinnode")


@dataclass(frozen=True)
class Grid:
    feature: str
    points: np.ndarray
    scale: str = "linear"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        object.__setattr__(self, "points", pts)
        if pts.ndim != 1 or len(pts) == 0:
            raise MetaXAIError("grid needs at least one point")
        if not np.isfinite(pts).all():
            raise MetaXAIError("grid points must be finite")
        if np.any(np.diff(pts) <= 0):
            raise MetaXAIError("grid points must be strictly increasing")
        if self.scale not in ("linear", "log10"):
            raise MetaXAIError(f"unknown grid scale {self.scale!r}")
        if self.scale == "log10" and pts[0] <= 0:
            raise MetaXAIError("log10 grid needs positive points")

    def __len__(self):
        return len(self.points)

    def transformed(self) -> np.ndarray:
        """Points on the grid's own axis (log10 for log grids)."""
        return np.log10(self.points) if self.scale == "log10" else self.points.copy()

    def __eq__(self, other):
        return (isinstance(other, Grid) and self.feature == other.feature and self.scale == other.scale
                and np.array_equal(self.points, other.points))

    def __hash__(self):
        return hash((self.feature, self.scale, self.points.tobytes()))


def make_grid(data: MetaDataset, feature: str, n: int = N_GRID, scale: str | None = None) -> Grid:
    """Default grid over the observed range of ``feature``.

    log10 spacing for shrinkage and n.trees, unit steps for the integer
    hyperparameters (thinned to ``n`` points if the range is wider), linear
    otherwise.
    """
    col = data.X[:, data.column_index(feature)]
    lo, hi = float(col.min()), float(col.max())
    if lo == hi:
        return Grid(feature, np.array([lo]), scale or "linear")
    if scale is None:
        scale = "log10" if feature in LOG_FEATURES and lo > 0 else "linear"
    if scale == "log10":
        pts = np.logspace(np.log10(lo), np.log10(hi), n)
        pts[0], pts[-1] = lo, hi
    elif feature in INTEGER_FEATURES:
        pts = np.arange(np.ceil(lo), np.floor(hi) + 1)
        if len(pts) > n:
            pts = np.unique(np.round(np.linspace(lo, hi, n)))
    else:
        pts = np.linspace(lo, hi, n)
    return Grid(feature, pts, scale)


@dataclass
class Profile:
    dataset_id: str
    feature: str
    grid: Grid
    predictions: np.ndarray
    source_model: str = ""
    extrapolated: bool = False

    def __post_init__(self):
        self.predictions = np.asarray(self.predictions, dtype=float)
        if self.predictions.shape != (len(self.grid),):
            raise MetaXAIError("profile length does not match its grid")
        if not np.isfinite(self.predictions).all():
            raise MetaXAIError("profile predictions must be finite")


def _feature_index(model, feature, feature_names):
    names = tuple(feature_names) if feature_names is not None else getattr(model, "feature_names", None)
    if names is None:
        raise MetaXAIError("feature_names required for a plain callable model")
    if feature not in names:
        raise MetaXAIError(f"{feature!r} is not a model feature")
    return names.index(feature)


def ceteris_paribus(model, instance, grid: Grid, *, dataset_id: str = "", source_model: str = "",
                    bounds: tuple | None = None, feature_names=None) -> Profile:
    """Predictions for ``instance`` with ``grid.feature`` overwritten by each grid point.

    ``instance`` is a feature vector, or a matrix whose per-point predictions
    are averaged (partial dependence over those rows). Grid points outside
    ``bounds`` are evaluated anyway and flagged with a warning.
    """
    j = _feature_index(model, grid.feature, feature_names)
    rows = np.atleast_2d(np.asarray(instance, dtype=float))
    predict = as_predictor(model)
    g = len(grid)
    block = np.repeat(rows, g, axis=0)
    block[:, j] = np.tile(grid.points, len(rows))
    preds = np.asarray(predict(block), dtype=float).reshape(len(rows), g)
    preds = preds[0] if len(rows) == 1 else preds.mean(axis=0)
    extrapolated = False
    if bounds is not None:
        lo, hi = bounds
        if grid.points[0] < lo or grid.points[-1] > hi:
            extrapolated = True
            warnings.warn(f"grid for {grid.feature} extends beyond [{lo}, {hi}]; extrapolating", stacklevel=2)
    return Profile(dataset_id, grid.feature, grid, preds, source_model, extrapolated)


def representative_instance(data: MetaDataset, dataset_id: str, mode: str = "default") -> np.ndarray:
    """Feature vector (``mode="default"``) or row matrix (``mode="pd"``) profiled for a dataset."""
    rows = data.X[data.mask(dataset_id)]
    if len(rows) == 0:
        raise MetaXAIError(f"dataset {dataset_id} not in meta-data")
    if mode == "pd":
        return rows.copy()
    if mode != "default":
        raise MetaXAIError(f"unknown instance mode {mode!r}")
    x = rows[0].copy()
    for h in HYPERPARAMETER_COLUMNS:
        if h in data.column_names:
            x[data.column_index(h)] = DEFAULT_CONFIG_VALUES[h]
    return x


def profile_matrix(models: Mapping[str, object], data: MetaDataset, feature: str, grid: Grid, *,
                   mode: str = "default", audit: Mapping[str, Sequence[str]] | None = None) -> list[Profile]:
    """One profile per dataset of ``data``, each from the fold model that held it out.

    ``audit`` maps a fold to the datasets its model was trained on; when given,
    a fold trained on its own dataset is rejected.
    """
    datasets = data.datasets
    missing = [d for d in datasets if d not in models]
    if missing:
        raise MetaXAIError(f"missing fold models for datasets: {', '.join(missing)}")
    if audit is not None:
        leaked = [d for d in datasets if d in audit.get(d, ())]
        if leaked:
            raise MetaXAIError(f"fold models trained on their held-out dataset: {', '.join(leaked)}")
    col = data.X[:, data.column_index(feature)]
    bounds = (float(col.min()), float(col.max()))
    return [
        ceteris_paribus(models[d], representative_instance(data, d, mode), grid, dataset_id=d,
                        source_model=f"fold_{d}", bounds=bounds, feature_names=data.column_names)
        for d in datasets
    ]


# ------------------------------------------------------------- clustering


def cluster_label(i: int) -> str:
    """A, B, ..., Z, AA, AB, ..."""
    letters = string.ascii_uppercase
    out = ""
    i += 1
    while i > 0:
        i, r = divmod(i - 1, 26)
        out = letters[r] + out
    return out


@dataclass
class ProfileClustering:
    k: int
    assignment: dict
    aggregated: dict
    linkage: np.ndarray = field(default=None, repr=False)

    def members(self, label: str) -> list[str]:
        return [d for d, c in self.assignment.items() if c == label]


def cluster_profiles(profiles: Sequence[Profile], k: int = 3) -> ProfileClustering:
    """Complete-linkage clustering of mean-centered profiles, cut at ``k`` clusters.

    Labels are assigned by descending cluster size, ties by smallest member
    dataset_id. Aggregated curves are pointwise means of the uncentered
    member predictions.
    """
    if k < 1:
        raise MetaXAIError("k must be >= 1")
    if len(profiles) < k:
        raise MetaXAIError(f"need at least k={k} profiles, got {len(profiles)}")
    profiles = sorted(profiles, key=lambda p: p.dataset_id)
    ids = [p.dataset_id for p in profiles]
    if len(set(ids)) != len(ids):
        raise MetaXAIError("duplicate dataset_id among profiles")
    grid = profiles[0].grid
    if any(p.grid != grid for p in profiles):
        raise MetaXAIError("all profiles must share one grid")
    P = np.vstack([p.predictions for p in profiles])
    centered = P - P.mean(axis=1, keepdims=True)
    if len(profiles) == 1:
        Z = np.empty((0, 4))
        raw = np.zeros(1, dtype=int)
    else:
        Z = linkage(centered, method="complete", metric="euclidean")
        raw = cut_tree(Z, n_clusters=k).ravel()
    clusters = {}
    for i, c in enumerate(raw):
        clusters.setdefault(int(c), []).append(i)
    ordered = sorted(clusters.values(), key=lambda m: (-len(m), ids[m[0]]))
    assignment, aggregated = {}, {}
    for n, members in enumerate(ordered):
        label = cluster_label(n)
        for i in members:
            assignment[ids[i]] = label
        aggregated[label] = Profile(label, profiles[0].feature, grid, P[members].mean(axis=0), "aggregate")
    return ProfileClustering(k, dict(sorted(assignment.items())), aggregated, Z)


# ------------------------------------------------------------- warm start


@dataclass(frozen=True)
class OptimalValue:
    value: float
    prediction: float


def optimal_hyperparameter(profile: Profile) -> OptimalValue:
    """Grid point of maximal prediction; ties go to the smallest grid value."""
    i = int(np.argmax(profile.predictions))
    return OptimalValue(float(profile.grid.points[i]), float(profile.predictions[i]))


def profile_rows(profiles: Sequence[Profile], clustering: ProfileClustering | None = None) -> list[str]:
    """``profiles.csv`` body lines (no header)."""
    lines = []
    for p in profiles:
        label = clustering.assignment.get(p.dataset_id, "") if clustering else ""
        for g, v in zip(p.grid.points, p.predictions):
            lines.append(f"{p.dataset_id},{p.feature},{fmt_float(g)},{fmt_float(v)},{label}")
    return lines


PROFILES_HEADER = "dataset_id,feature,grid_value,prediction,cluster"


def write_profiles_csv(profiles: Sequence[Profile], path, clustering: ProfileClustering | None = None) -> None:
    Path(path).write_text("\n".join([PROFILES_HEADER] + profile_rows(profiles, clustering)) + "\n")


def read_profiles_csv(path) -> tuple[list[Profile], dict]:
    """Profiles and cluster labels keyed by ``(dataset_id, feature)``; grid scale inferred from the feature."""
    rows = Path(path).read_text().splitlines()[1:]
    by_key: dict[tuple, list] = {}
    labels = {}
    for r in rows:
        if not r:
            continue
        d, f, g, v, c = r.split(",")
        by_key.setdefault((d, f), []).append((float(g), float(v)))
        if c:
            labels[(d, f)] = c
    out = []
    for (d, f), pts in by_key.items():
        g = np.array([p[0] for p in pts])
        scale = "log10" if f in LOG_FEATURES and g[0] > 0 else "linear"
        out.append(Profile(d, f, Grid(f, g, scale), np.array([p[1] for p in pts])))
    return out, labels


def write_warm_starts_csv(profiles: Sequence[Profile], path) -> None:
    lines = ["dataset_id,feature,optimal_value,predicted_rating"]
    for p in profiles:
        opt = optimal_hyperparameter(p)
        lines.append(f"{p.dataset_id},{p.feature},{fmt_float(opt.value)},{fmt_float(opt.prediction)}")
    Path(path).write_text("\n".join(lines) + "\n")
