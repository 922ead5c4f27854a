"""Dataset-level influence on the surrogate: Cook's-style displacement and warm-start shift.

For a test dataset ``t`` the full model is the fold model trained without
``t``. For every remaining dataset ``i`` a reduced model is refit without ``t``
and ``i`` using the same parameters and seed. Influence of ``i`` is

    D_i = sum_j (f(x_j) - f_{-i}(x_j))^2 / (p * s2)

over the full model's training rows, with ``p`` the feature count and ``s2``
the full model's training MSE (floored at 1e-12). The optimal-value shift
compares argmax points of the CP profiles of ``t`` under both models.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import surrogate
from ._parallel import parallel_map
from .errors import MetaXAIError
from .meta_data import MetaDataset, fmt_float
from .profiles import Grid, Profile, ceteris_paribus, optimal_hyperparameter, representative_instance
from .surrogate import SurrogateParams, as_predictor

S2_FLOOR = 1e-12


def cooks_distance(full_model, reduced_model, reference_rows, p: int, s2: float) -> float:
    """Scaled squared displacement of predictions on ``reference_rows``."""
    if p < 1:
        raise MetaXAIError("p must be >= 1")
    if not s2 > 0:
        raise MetaXAIError("s2 must be positive")
    rows = np.atleast_2d(np.asarray(reference_rows, dtype=float))
    if rows.shape[0] == 0:
        raise MetaXAIError("reference_rows is empty")
    a = as_predictor(full_model)(rows)
    b = a if reduced_model is full_model else as_predictor(reduced_model)(rows)
    return float(np.sum((np.asarray(a) - np.asarray(b)) ** 2) / (p * s2))


@dataclass(frozen=True)
class Shift:
    log: float
    raw: float
    full_value: float
    reduced_value: float


def profile_shift(full: Profile, reduced: Profile) -> Shift:
    """Distance between the argmax points of two profiles on the same grid."""
    if full.grid != reduced.grid:
        raise MetaXAIError("profiles must share a grid")
    a = optimal_hyperparameter(full).value
    b = optimal_hyperparameter(reduced).value
    raw = abs(a - b)
    log = abs(np.log10(a) - np.log10(b)) if full.grid.scale == "log10" else raw
    return Shift(float(log), float(raw), a, b)


def optimal_shift(full_model, reduced_model, test_instance, feature: str, grid: Grid, *,
                  feature_names=None) -> Shift:
    """Shift of the CP-profile optimum of ``test_instance`` between two models.

    ``log`` is measured on the grid's scale (log10 units for log grids); ``raw``
    on the original scale.
    """
    if grid.feature != feature:
        raise MetaXAIError(f"grid is for {grid.feature!r}, not {feature!r}")
    full = ceteris_paribus(full_model, test_instance, grid, feature_names=feature_names)
    reduced = ceteris_paribus(reduced_model, test_instance, grid, feature_names=feature_names)
    return profile_shift(full, reduced)


@dataclass(frozen=True)
class InfluenceRecord:
    removed_dataset_id: str
    cooks_distance: float
    optimal_shift: float
    optimal_shift_raw: float
    feature: str


@dataclass
class InfluenceResult:
    test_dataset_id: str
    feature: str
    records: list
    full_profile: Profile
    reduced_profiles: dict
    audit: dict = field(default_factory=dict)


def _reduced(args):
    train, removed, params = args
    part = train.without(removed)
    return surrogate.fit(part.X, part.y, params, train.column_names)


def influence_analysis(data: MetaDataset, params: SurrogateParams | None, test_dataset_id: str, feature: str,
                       grid: Grid, *, full_model=None, jobs: int = 1, mode: str = "default") -> InfluenceResult:
    """Leave-one-dataset-out influence of every training dataset of the ``test_dataset_id`` fold.

    ``full_model`` may pass in the existing fold model; it must have been fit
    on ``data.without(test_dataset_id)`` with ``params``.
    """
    params = params or SurrogateParams()
    if test_dataset_id not in data.datasets:
        raise MetaXAIError(f"test dataset {test_dataset_id} not in meta-data")
    train = data.without(test_dataset_id)
    removable = train.datasets
    if len(removable) < 2:
        raise MetaXAIError("influence needs at least 2 training datasets besides the test dataset")
    if grid.feature != feature:
        raise MetaXAIError(f"grid is for {grid.feature!r}, not {feature!r}")
    full_fits = 0
    if full_model is None:
        full_model = surrogate.fit(train.X, train.y, params, data.column_names)
        full_fits = 1
    reduced = parallel_map(_reduced, [(train, d, params) for d in removable], jobs)

    s2 = max(surrogate.mse(as_predictor(full_model)(train.X), train.y), S2_FLOOR)
    p = data.X.shape[1]
    instance = representative_instance(data, test_dataset_id, mode)
    full_profile = ceteris_paribus(full_model, instance, grid, dataset_id=test_dataset_id, source_model="full",
                                   feature_names=data.column_names)
    records, profiles = [], {}
    for d, model in zip(removable, reduced):
        prof = ceteris_paribus(model, instance, grid, dataset_id=test_dataset_id, source_model=f"without_{d}",
                               feature_names=data.column_names)
        shift = profile_shift(full_profile, prof)
        records.append(InfluenceRecord(d, cooks_distance(full_model, model, train.X, p, s2),
                                       shift.log, shift.raw, feature))
        profiles[d] = prof
    records.sort(key=lambda r: (-r.cooks_distance, r.removed_dataset_id))
    audit = {
        "full_fits": full_fits,
        "reduced_fits": len(reduced),
        "seed": params.seed,
        "reduced_seeds": [params.seed] * len(reduced),
        "s2": s2,
        "p": p,
        "reference_rows": len(train),
    }
    return InfluenceResult(test_dataset_id, feature, records, full_profile, profiles, audit)


def write_influence_csv(records: Sequence[InfluenceRecord], path) -> None:
    lines = ["removed_dataset_id,cooks_distance,optimal_shift_log,optimal_shift_raw,feature"]
    for r in records:
        lines.append(f"{r.removed_dataset_id},{fmt_float(r.cooks_distance)},{fmt_float(r.optimal_shift)},"
                     f"{fmt_float(r.optimal_shift_raw)},{r.feature}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_influence_csv(path) -> list[InfluenceRecord]:
    out = []
    for r in Path(path).read_text().splitlines()[1:]:
        if r:
            d, c, sl, sr, f = r.split(",")
            out.append(InfluenceRecord(d, float(c), float(sl), float(sr), f))
    return out
