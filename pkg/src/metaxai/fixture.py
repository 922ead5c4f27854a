"""Synthetic stand-in for the 20 binary OpenML100 tasks.

The generated tables follow the ingestion schema: 38 statistical columns,
AUC evaluations of 101 gbm configurations and of the five landmarker models
on 20 splits each. Configuration AUCs come from a hand-written response
surface in which hyperparameters dominate and bag.fraction interacts with
NumberOfFeatures. Landmarker AUCs are slotted between configuration AUCs so
that the ingested landmarker ratios reproduce the published two-decimal
values for every dataset.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .meta_data import (
    DEFAULT_GBM,
    EVAL_HEADER,
    LANDMARKER_COLUMNS,
    fmt_float,
    sample_configs,
    write_config_table,
)

N_SPLITS = 20

STAT_COLUMNS = (
    "AutoCorrelation", "ClassEntropy", "Dimensionality", "EquivalentNumberOfAtts",
    "MajorityClassPercentage", "MajorityClassSize", "MaxKurtosisOfNumericAtts",
    "MaxMeansOfNumericAtts", "MaxMutualInformation", "MaxSkewnessOfNumericAtts",
    "MaxStdDevOfNumericAtts", "MeanKurtosisOfNumericAtts", "MeanMeansOfNumericAtts",
    "MeanMutualInformation", "MeanSkewnessOfNumericAtts", "MeanStdDevOfNumericAtts",
    "MinKurtosisOfNumericAtts", "MinMeansOfNumericAtts", "MinSkewnessOfNumericAtts",
    "MinStdDevOfNumericAtts", "MinorityClassPercentage", "MinorityClassSize",
    "NumberOfBinaryFeatures", "NumberOfFeatures", "NumberOfInstances",
    "NumberOfNumericFeatures", "NumberOfSymbolicFeatures", "PercentageOfBinaryFeatures",
    "PercentageOfNumericFeatures", "PercentageOfSymbolicFeatures",
    "Quartile1KurtosisOfNumericAtts", "Quartile1MeansOfNumericAtts",
    "Quartile1SkewnessOfNumericAtts", "Quartile1StdDevOfNumericAtts",
    "Quartile2KurtosisOfNumericAtts", "Quartile2MeansOfNumericAtts",
    "Quartile3KurtosisOfNumericAtts", "Quartile3MeansOfNumericAtts",
)

# id, name, instances, features (incl. target), minority class size, landmarkers
# (knn, glmnet, ranger, randomForest) relative to default gbm, as published.
DATASETS = (
    ("37", "diabetes", 768, 9, 268, (1.10, 2.25, 2.36, 2.30)),
    ("44", "spambase", 4601, 58, 1813, (2.97, 4.78, 7.57, 7.74)),
    ("1043", "ada_agnostic", 4562, 49, 1130, (2.31, 5.41, 6.28, 5.37)),
    ("1046", "mozilla4", 15545, 6, 4808, (1.71, 0.39, 2.62, 2.84)),
    ("1049", "pc4", 1458, 38, 178, (1.11, 2.13, 3.46, 3.57)),
    ("1050", "pc3", 1563, 38, 160, (0.86, 1.34, 1.85, 1.88)),
    ("1063", "kc2", 522, 22, 107, (0.81, 0.73, 0.90, 0.98)),
    ("1067", "kc1", 2109, 22, 326, (0.23, 1.16, 1.49, 1.66)),
    ("1068", "pc1", 1109, 22, 77, (1.12, 0.27, 1.92, 1.84)),
    ("1462", "banknote-authentication", 1372, 5, 610, (6.47, 4.99, 5.56, 6.02)),
    ("1464", "blood-transfusion-service-center", 748, 5, 178, (0.64, 1.23, 0.86, 0.71)),
    ("1467", "climate-model-simulation-crashes", 540, 21, 46, (0.35, 1.36, 1.12, 1.15)),
    ("1471", "eeg-eye-state", 14980, 15, 6723, (2.48, 0.93, 3.34, 4.16)),
    ("1479", "hill-valley", 1212, 101, 606, (1.78, 0.43, 2.04, 2.24)),
    ("1485", "madelon", 2600, 501, 1300, (0.34, 0.48, 1.61, 1.58)),
    ("1487", "ozone-level-8hr", 2534, 73, 160, (1.41, 3.40, 4.43, 4.36)),
    ("1489", "phoneme", 5404, 6, 1586, (4.89, 2.90, 7.12, 8.13)),
    ("1494", "qsar-biodeg", 1055, 42, 356, (4.16, 5.34, 6.74, 6.81)),
    ("1510", "wdbc", 569, 31, 212, (1.56, 0.63, 1.88, 1.91)),
    ("1570", "wilt", 4839, 6, 261, (2.73, 4.80, 7.15, 7.28)),
)

PUBLISHED_LANDMARKERS = {d[0]: d[5] for d in DATASETS}


def _stat_row(rng, n_inst, n_feat, n_min) -> dict:
    n_num = n_feat - 1
    p_min = n_min / n_inst
    entropy = -(p_min * np.log2(p_min) + (1 - p_min) * np.log2(1 - p_min))
    kurt = np.sort(rng.lognormal(1.0, 1.0, 5))
    means = np.sort(rng.normal(0, 50, 5))
    skew = np.sort(rng.normal(0.5, 1.5, 5))
    sd = np.sort(rng.lognormal(1.0, 1.5, 5))
    mi = np.sort(rng.uniform(0.001, 0.3, 2))
    row = {
        "AutoCorrelation": rng.uniform(0.3, 1.0),
        "ClassEntropy": entropy,
        "Dimensionality": n_feat / n_inst,
        "EquivalentNumberOfAtts": entropy / mi[0],
        "MajorityClassPercentage": 100 * (1 - p_min),
        "MajorityClassSize": n_inst - n_min,
        "MaxKurtosisOfNumericAtts": kurt[4],
        "MaxMeansOfNumericAtts": means[4],
        "MaxMutualInformation": mi[1],
        "MaxSkewnessOfNumericAtts": skew[4],
        "MaxStdDevOfNumericAtts": sd[4],
        "MeanKurtosisOfNumericAtts": kurt[2] * 1.1,
        "MeanMeansOfNumericAtts": means[2] * 1.05,
        "MeanMutualInformation": mi.mean(),
        "MeanSkewnessOfNumericAtts": skew[2] * 1.02,
        "MeanStdDevOfNumericAtts": sd[2] * 1.1,
        "MinKurtosisOfNumericAtts": kurt[0],
        "MinMeansOfNumericAtts": means[0],
        "MinSkewnessOfNumericAtts": skew[0],
        "MinStdDevOfNumericAtts": sd[0],
        "MinorityClassPercentage": 100 * p_min,
        "MinorityClassSize": n_min,
        "NumberOfBinaryFeatures": 1,
        "NumberOfFeatures": n_feat,
        "NumberOfInstances": n_inst,
        "NumberOfNumericFeatures": n_num,
        "NumberOfSymbolicFeatures": 1,
        "PercentageOfBinaryFeatures": 100 / n_feat,
        "PercentageOfNumericFeatures": 100 * n_num / n_feat,
        "PercentageOfSymbolicFeatures": 100 / n_feat,
        "Quartile1KurtosisOfNumericAtts": kurt[1],
        "Quartile1MeansOfNumericAtts": means[1],
        "Quartile1SkewnessOfNumericAtts": skew[1],
        "Quartile1StdDevOfNumericAtts": sd[1],
        "Quartile2KurtosisOfNumericAtts": kurt[2],
        "Quartile2MeansOfNumericAtts": means[2],
        "Quartile3KurtosisOfNumericAtts": kurt[3],
        "Quartile3MeansOfNumericAtts": means[3],
    }
    return {k: float(v) for k, v in row.items()}


def response_surface(hyper: np.ndarray, n_inst: float, n_feat: float) -> np.ndarray:
    """Noise-free AUC shift for configurations ``hyper`` (columns in
    HYPERPARAMETER_COLUMNS order) on a dataset of the given size."""
    shrinkage, depth, n_trees, bag, min_node = hyper.T
    size = np.log10(n_inst)
    width = np.log10(n_feat)
    learning = np.log10(shrinkage * n_trees)
    # small data sets overfit once the learning budget passes an interior optimum
    onset = 0.6 * (size - 2.7)
    overfit = 0.15 * max(0.0, 3.4 - size)
    out = 0.06 * np.tanh(1.5 * (learning - onset)) - overfit * np.maximum(0.0, learning - onset - 0.2) ** 2
    out += 0.004 * depth * (size - 2.6)
    out += 0.04 * (bag - 0.6) * (width - 1.4)
    out -= 0.0008 * min_node * (3.6 - size)
    return out


def _slot_positions(targets: np.ndarray, n_splits: int, n_slots: int, rng) -> np.ndarray:
    """Per-split rank positions (0-based, distinct within a split) whose sums
    over splits equal ``targets``."""
    k = len(targets)
    pos = np.empty((k, n_splits), dtype=int)
    for m, total in enumerate(targets):
        q, r = divmod(int(total), n_splits)
        row = np.full(n_splits, q)
        row[rng.permutation(n_splits)[:r]] += 1
        pos[m] = row
    for _ in range(10000):
        clash = False
        for s in range(n_splits):
            col = pos[:, s]
            vals, counts = np.unique(col, return_counts=True)
            for v in vals[counts > 1]:
                m = np.flatnonzero(col == v)[1]
                # move one step up here and one step down in a split where that is free
                for s2 in rng.permutation(n_splits):
                    if s2 == s:
                        continue
                    up, down = pos[m, s] + 1, pos[m, s2] - 1
                    if up < n_slots and down >= 0 and up not in pos[:, s] and down not in pos[:, s2]:
                        pos[m, s] = up
                        pos[m, s2] = down
                        break
                clash = True
        if not clash:
            return pos
    raise RuntimeError("could not place landmarker ranks")


def generate_fixture(seed: int = 2021):
    """Return ``(stat_rows, eval_rows, configs, config_ids)``.

    ``stat_rows`` maps dataset_id to a dict of the 38 statistics;
    ``eval_rows`` is a list of ``(dataset_id, model_id, split_index, auc)``.
    """
    rng = np.random.default_rng(seed)
    configs = sample_configs(100, seed, append_default=True)
    config_ids = [f"c{i:03d}" for i in range(100)] + ["default"]
    hyper = np.array([c.to_row() for c in configs], dtype=float)
    n_cfg = len(configs)
    n_slots = n_cfg + len(LANDMARKER_COLUMNS) + 1
    models = LANDMARKER_COLUMNS + (DEFAULT_GBM,)

    stats, evals = {}, []
    for dataset_id, _name, n_inst, n_feat, n_min, ratios in DATASETS:
        stats[dataset_id] = _stat_row(rng, n_inst, n_feat, n_min)
        base = 0.66 + 0.2 * rng.uniform()
        surface = response_surface(hyper, n_inst, n_feat)

        # landmarker rank sums: rating = sum / ((n_slots - 1) * N_SPLITS)
        ratios = np.array(ratios)
        g = min(0.9, 0.95 / ratios.max())
        t_gbm = int(round(g * (n_slots - 1) * N_SPLITS))
        targets = np.append(np.rint(ratios * t_gbm), t_gbm).astype(int)
        pos = _slot_positions(targets, N_SPLITS, n_slots, rng)

        for s in range(N_SPLITS):
            auc = base + surface + rng.normal(0, 0.01) + rng.normal(0, 0.004, n_cfg)
            auc = np.clip(auc, 0.02, 0.98)
            order = np.argsort(auc, kind="stable")
            sorted_auc = auc[order]
            slots = np.full(n_slots, np.nan)
            land_slot = {int(pos[m, s]): m for m in range(len(models))}
            cfg_slots = [i for i in range(n_slots) if i not in land_slot]
            slots[cfg_slots] = sorted_auc
            for slot in sorted(land_slot):
                lo = slots[:slot][~np.isnan(slots[:slot])]
                hi = slots[slot + 1:][~np.isnan(slots[slot + 1:])]
                below = lo[-1] if lo.size else sorted_auc[0] - 0.01
                above = hi[0] if hi.size else sorted_auc[-1] + 0.01
                slots[slot] = below + (above - below) / 2
            for cid, a in zip(config_ids, auc):
                evals.append((dataset_id, cid, s, float(a)))
            for slot, m in land_slot.items():
                evals.append((dataset_id, models[m], s, float(slots[slot])))
    return stats, evals, configs, config_ids


def write_fixture(out_dir, seed: int = 2021) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stats, evals, configs, config_ids = generate_fixture(seed)
    paths = {
        "stat_csv": out / "stat_features.csv",
        "eval_csv": out / "evaluations.csv",
        "config_csv": out / "configs.csv",
    }
    with paths["stat_csv"].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("dataset_id",) + STAT_COLUMNS)
        for d, row in stats.items():
            w.writerow([d] + [fmt_float(row[c]) for c in STAT_COLUMNS])
    with paths["eval_csv"].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVAL_HEADER)
        for d, m, s, a in evals:
            w.writerow([d, m, s, fmt_float(a)])
    write_config_table(configs, paths["config_csv"], config_ids)
    return paths


assert len(STAT_COLUMNS) == 38
