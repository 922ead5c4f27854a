"""Meta-dataset schema, rank-normalized ratings, landmarkers and configuration sampling.

Input tables (all CSV, header row required):

- ``stat_features.csv``: ``dataset_id,<statistical columns>``
- ``evaluations.csv``: ``dataset_id,model_id,split_index,auc``
- ``configs.csv``: ``config_id,shrinkage,interaction.depth,n.trees,bag.fraction,n.minobsinnode``

The canonical output ``meta_dataset.csv`` has one row per (dataset, configuration)
with ``dataset_id,config_id,<features>,rating``; floats are written with 17
significant digits so a read/write cycle is byte-identical.
"""
from __future__ import annotations

import csv
import enum
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import (
    DegenerateBlockError,
    DegenerateRatioError,
    JoinError,
    MetaXAIError,
    ParseError,
    SchemaError,
)

HYPERPARAMETER_COLUMNS = ("shrinkage", "interaction.depth", "n.trees", "bag.fraction", "n.minobsinnode")
LANDMARKER_COLUMNS = ("knn", "glmnet", "ranger", "randomForest")
DEFAULT_GBM = "gbm_default"
LANDMARKER_MODELS = LANDMARKER_COLUMNS + (DEFAULT_GBM,)
N_STATISTICAL = 38

EVAL_HEADER = ("dataset_id", "model_id", "split_index", "auc")
CONFIG_HEADER = ("config_id",) + HYPERPARAMETER_COLUMNS

# gbm package defaults; the extra configuration evaluated next to the sampled ones
DEFAULT_CONFIG_VALUES = {
    "shrinkage": 0.1,
    "interaction.depth": 1,
    "n.trees": 100,
    "bag.fraction": 0.5,
    "n.minobsinnode": 10,
}

DEFAULT_RANGES = {
    "shrinkage": (1e-4, 0.1),
    "interaction.depth": (1, 5),
    "n.trees": (50, 10000),
    "bag.fraction": (0.2, 1.0),
    "n.minobsinnode": (3, 25),
}
_LOG_UNIFORM = {"shrinkage", "n.trees"}
_INTEGER = {"interaction.depth", "n.trees", "n.minobsinnode"}


def fmt_float(value: float) -> str:
    return format(float(value), ".17g")


class FeatureGroup(str, enum.Enum):
    HYPERPARAMETER = "Hyperparameter"
    LANDMARKER = "Landmarker"
    STATISTICAL = "Statistical"


def group_of(column: str) -> FeatureGroup:
    if column in HYPERPARAMETER_COLUMNS:
        return FeatureGroup.HYPERPARAMETER
    if column in LANDMARKER_COLUMNS:
        return FeatureGroup.LANDMARKER
    return FeatureGroup.STATISTICAL


@dataclass(frozen=True)
class HyperparameterConfig:
    shrinkage: float
    interaction_depth: int
    n_trees: int
    bag_fraction: float
    min_node: int

    def __post_init__(self):
        checks = [
            (0 < self.shrinkage <= 1, "shrinkage must lie in (0, 1]"),
            (0 < self.bag_fraction <= 1, "bag_fraction must lie in (0, 1]"),
            (1 <= self.interaction_depth <= 10, "interaction_depth must lie in [1, 10]"),
            (1 <= self.n_trees <= 10000, "n_trees must lie in [1, 10000]"),
            (1 <= self.min_node <= 50, "min_node must lie in [1, 50]"),
        ]
        for ok, msg in checks:
            if not ok:
                raise MetaXAIError(f"{msg}: {self}")
        for name in ("interaction_depth", "n_trees", "min_node"):
            if int(getattr(self, name)) != getattr(self, name):
                raise MetaXAIError(f"{name} must be an integer: {self}")

    def to_row(self) -> tuple:
        """Values in ``HYPERPARAMETER_COLUMNS`` order."""
        return (self.shrinkage, self.interaction_depth, self.n_trees, self.bag_fraction, self.min_node)

    @classmethod
    def from_row(cls, values: Sequence[float]) -> "HyperparameterConfig":
        s, d, t, b, m = values
        return cls(float(s), int(d), int(t), float(b), int(m))


DEFAULT_CONFIG = HyperparameterConfig.from_row([DEFAULT_CONFIG_VALUES[c] for c in HYPERPARAMETER_COLUMNS])


@dataclass(frozen=True)
class EvaluationRecord:
    dataset_id: str
    model_id: str
    split_index: int
    auc: float

    def __post_init__(self):
        if not 0.0 <= self.auc <= 1.0:
            raise SchemaError(f"auc outside [0, 1] for {self.dataset_id}/{self.model_id}/{self.split_index}: {self.auc}")
        if self.split_index < 0:
            raise SchemaError(f"negative split_index for {self.dataset_id}/{self.model_id}")


@dataclass(frozen=True)
class MetaInstance:
    dataset_id: str
    statistical: tuple
    landmarkers: tuple
    hyperparameters: HyperparameterConfig
    rating: float

    def features(self) -> np.ndarray:
        return np.array(self.statistical + self.landmarkers + self.hyperparameters.to_row(), dtype=float)


@dataclass
class MetaDataset:
    """Meta-instances as a dense feature matrix.

    Rows are ordered by ``dataset_id`` (lexicographic) and, within a dataset,
    by the order of the configuration table.
    """

    dataset_ids: np.ndarray
    config_ids: np.ndarray
    X: np.ndarray
    y: np.ndarray
    column_names: tuple
    column_groups: dict = field(default=None)

    def __post_init__(self):
        self.dataset_ids = np.asarray(self.dataset_ids, dtype=object)
        self.config_ids = np.asarray(self.config_ids, dtype=object)
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self.column_names = tuple(self.column_names)
        if self.column_groups is None:
            self.column_groups = {c: group_of(c) for c in self.column_names}
        n = len(self.y)
        if self.X.shape != (n, len(self.column_names)) or len(self.dataset_ids) != n or len(self.config_ids) != n:
            raise SchemaError("meta-dataset columns have inconsistent lengths")

    def __len__(self):
        return len(self.y)

    @property
    def datasets(self) -> list[str]:
        return sorted(set(self.dataset_ids))

    def column_index(self, name: str) -> int:
        try:
            return self.column_names.index(name)
        except ValueError:
            raise MetaXAIError(f"unknown feature column {name!r}") from None

    def mask(self, dataset_id: str) -> np.ndarray:
        return self.dataset_ids == dataset_id

    def without(self, *dataset_ids: str) -> "MetaDataset":
        keep = ~np.isin(self.dataset_ids, list(dataset_ids))
        return self.subset(keep)

    def only(self, dataset_id: str) -> "MetaDataset":
        return self.subset(self.mask(dataset_id))

    def subset(self, rows) -> "MetaDataset":
        return MetaDataset(
            self.dataset_ids[rows], self.config_ids[rows], self.X[rows], self.y[rows],
            self.column_names, dict(self.column_groups),
        )

    def groups(self) -> dict[str, list[str]]:
        """Group name -> member columns, in column order."""
        out: dict[str, list[str]] = {}
        for c in self.column_names:
            out.setdefault(FeatureGroup(self.column_groups[c]).value, []).append(c)
        return out

    @property
    def instances(self) -> list[MetaInstance]:
        stat = [i for i, c in enumerate(self.column_names) if self.column_groups[c] == FeatureGroup.STATISTICAL]
        land = [self.column_index(c) for c in LANDMARKER_COLUMNS]
        hyp = [self.column_index(c) for c in HYPERPARAMETER_COLUMNS]
        return [
            MetaInstance(
                str(d), tuple(row[stat]), tuple(row[land]),
                HyperparameterConfig.from_row(row[hyp]), float(r),
            )
            for d, row, r in zip(self.dataset_ids, self.X, self.y)
        ]


# ---------------------------------------------------------------- ratings


def _blocks(evals: Iterable[EvaluationRecord]) -> dict[str, dict[int, dict[str, float]]]:
    blocks: dict[str, dict[int, dict[str, float]]] = defaultdict(lambda: defaultdict(dict))
    for e in evals:
        block = blocks[e.dataset_id][e.split_index]
        if e.model_id in block:
            raise SchemaError(f"duplicate evaluation for dataset {e.dataset_id}, model {e.model_id}, split {e.split_index}")
        block[e.model_id] = e.auc
    return blocks


def rank_normalize(evals: Iterable[EvaluationRecord]) -> dict[tuple[str, str], float]:
    """Per-dataset ratings in [0, 1] from AUC evaluations.

    Models are ranked inside every (dataset, split) block, higher AUC getting the
    higher rank, ties sharing the average rank. Ranks are scaled with
    ``(rank - 1) / (n - 1)`` and averaged over the dataset's splits.
    """
    blocks = _blocks(evals)
    if not blocks:
        raise SchemaError("no evaluations given")
    ratings = {}
    for dataset_id in sorted(blocks):
        splits = blocks[dataset_id]
        split_ids = sorted(splits)
        models = sorted(splits[split_ids[0]])
        scaled = np.empty((len(split_ids), len(models)))
        for row, s in enumerate(split_ids):
            block = splits[s]
            if set(block) != set(models):
                raise SchemaError(
                    f"block (dataset {dataset_id}, split {s}) has models {sorted(block)}, "
                    f"expected {models}"
                )
            if len(models) < 2:
                raise DegenerateBlockError(f"block (dataset {dataset_id}, split {s}) holds a single model")
            ranks = rankdata([block[m] for m in models], method="average")
            scaled[row] = (ranks - 1.0) / (len(models) - 1.0)
        means = scaled.mean(axis=0)
        for m, r in zip(models, means):
            ratings[(dataset_id, m)] = float(r)
    return ratings


def compute_landmarkers(evals: Iterable[EvaluationRecord]) -> dict[str, tuple[float, float, float, float]]:
    """Ratio of each baseline model's rating to the default gbm rating, per dataset.

    Ratings come from :func:`rank_normalize` over every model present in
    ``evals``; the result order is ``(knn, glmnet, ranger, randomForest)``.
    """
    ratings = rank_normalize(evals)
    datasets = sorted({d for d, _ in ratings})
    out = {}
    for d in datasets:
        missing = [m for m in LANDMARKER_MODELS if (d, m) not in ratings]
        if missing:
            raise SchemaError(f"dataset {d}: missing landmarker evaluations for {missing}")
        base = ratings[(d, DEFAULT_GBM)]
        if base == 0:
            raise DegenerateRatioError(d)
        out[d] = tuple(ratings[(d, m)] / base for m in LANDMARKER_COLUMNS)
    return out


# ---------------------------------------------------------------- sampling


def _check_ranges(ranges: Mapping[str, tuple]) -> None:
    for name in HYPERPARAMETER_COLUMNS:
        if name not in ranges:
            raise MetaXAIError(f"missing range for {name}")
        lo, hi = ranges[name]
        if lo > hi or (name not in _INTEGER and lo == hi):
            raise MetaXAIError(f"empty or inverted range for {name}: [{lo}, {hi}]")
        if name in _LOG_UNIFORM and lo <= 0:
            raise MetaXAIError(f"log-uniform range for {name} must be positive: [{lo}, {hi}]")


def sample_configs(n: int, seed: int, ranges: Mapping[str, tuple] | None = None,
                   append_default: bool = False) -> list[HyperparameterConfig]:
    """Draw ``n`` random gbm configurations.

    shrinkage and n.trees are log-uniform, interaction.depth and n.minobsinnode
    uniform over integers, bag.fraction uniform. With ``append_default`` the gbm
    default configuration is added as the last element.
    """
    if n < 1:
        raise MetaXAIError("n must be >= 1")
    ranges = dict(DEFAULT_RANGES if ranges is None else ranges)
    _check_ranges(ranges)
    rng = np.random.default_rng(seed)
    cols = {}
    for name in HYPERPARAMETER_COLUMNS:
        lo, hi = ranges[name]
        if name in _LOG_UNIFORM:
            v = np.exp(rng.uniform(math.log(lo), math.log(hi), n))
            if name in _INTEGER:
                v = np.clip(np.rint(v), math.ceil(lo), math.floor(hi))
        elif name in _INTEGER:
            v = rng.integers(int(lo), int(hi) + 1, n)
        else:
            v = rng.uniform(lo, hi, n)
        cols[name] = v
    configs = [
        HyperparameterConfig.from_row([cols[c][i] for c in HYPERPARAMETER_COLUMNS]) for i in range(n)
    ]
    if append_default:
        configs.append(DEFAULT_CONFIG)
    return configs


# ---------------------------------------------------------------- CSV I/O


def _read_csv(path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty file")
    header, body = rows[0], [r for r in rows[1:] if r]
    for i, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise SchemaError(f"{path}: line {i} has {len(r)} fields, header has {len(header)}")
    return header, body


def _number(path, line, column, text) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ParseError(path, line, column, text) from None
    if not math.isfinite(v):
        raise ParseError(path, line, column, text)
    return v


def read_stat_table(path, n_statistical: int | None = N_STATISTICAL) -> tuple[list[str], dict[str, np.ndarray]]:
    header, body = _read_csv(path)
    if header[0] != "dataset_id":
        raise SchemaError(f"{path}: first column must be dataset_id, got {header[0]!r}")
    columns = header[1:]
    if n_statistical is not None and len(columns) != n_statistical:
        raise SchemaError(f"{path}: expected {n_statistical} statistical columns, found {len(columns)}")
    clash = [c for c in columns if c in HYPERPARAMETER_COLUMNS or c in LANDMARKER_COLUMNS]
    if clash or len(set(columns)) != len(columns):
        raise SchemaError(f"{path}: duplicate or reserved column names {clash or columns}")
    table = {}
    for line, row in enumerate(body, start=2):
        d = row[0]
        if d in table:
            raise SchemaError(f"{path}: dataset {d} listed twice")
        table[d] = np.array([_number(path, line, c, v) for c, v in zip(columns, row[1:])])
    return columns, table


def read_eval_table(path) -> list[EvaluationRecord]:
    header, body = _read_csv(path)
    if tuple(header) != EVAL_HEADER:
        raise SchemaError(f"{path}: header must be {','.join(EVAL_HEADER)}")
    out = []
    for line, (d, m, s, auc) in enumerate(body, start=2):
        split = _number(path, line, "split_index", s)
        if split != int(split):
            raise ParseError(path, line, "split_index", s)
        out.append(EvaluationRecord(d, m, int(split), _number(path, line, "auc", auc)))
    return out


def read_config_table(path) -> dict[str, HyperparameterConfig]:
    header, body = _read_csv(path)
    if tuple(header) != CONFIG_HEADER:
        raise SchemaError(f"{path}: header must be {','.join(CONFIG_HEADER)}")
    out = {}
    for line, row in enumerate(body, start=2):
        values = [_number(path, line, c, v) for c, v in zip(HYPERPARAMETER_COLUMNS, row[1:])]
        if row[0] in out:
            raise SchemaError(f"{path}: config {row[0]} listed twice")
        out[row[0]] = HyperparameterConfig.from_row(values)
    return out


def write_config_table(configs: Sequence[HyperparameterConfig], path, ids: Sequence[str] | None = None) -> None:
    if ids is None:
        ids = [f"c{i:03d}" for i in range(len(configs))]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CONFIG_HEADER)
        for cid, cfg in zip(ids, configs):
            w.writerow([cid] + [fmt_float(v) for v in cfg.to_row()])


def assemble_meta_dataset(stat_table, eval_table, config_table,
                          n_statistical: int | None = N_STATISTICAL) -> MetaDataset:
    """Join the three input tables into a :class:`MetaDataset`.

    Configuration ratings are ranked among configurations only; landmarker
    ratings are ranked among every model evaluated on the dataset.
    """
    stat_cols, stats = read_stat_table(stat_table, n_statistical)
    evals = read_eval_table(eval_table)
    configs = read_config_table(config_table)
    if not evals:
        raise SchemaError(f"{eval_table}: no evaluations")

    unknown = {e.model_id for e in evals} - set(configs) - set(LANDMARKER_MODELS)
    if unknown:
        raise SchemaError(f"{eval_table}: unknown model ids {sorted(unknown)}")
    eval_ids = {e.dataset_id for e in evals}
    if eval_ids != set(stats):
        raise JoinError("datasets missing from one of the tables", eval_ids ^ set(stats))
    seen = defaultdict(set)
    for e in evals:
        seen[e.dataset_id].add(e.model_id)
    for d in sorted(eval_ids):
        missing = (set(configs) | set(LANDMARKER_MODELS)) - seen[d]
        if missing:
            raise JoinError(f"dataset {d} lacks evaluations for models", missing)

    ratings = rank_normalize(e for e in evals if e.model_id in configs)
    landmarkers = compute_landmarkers(evals)

    columns = tuple(stat_cols) + LANDMARKER_COLUMNS + HYPERPARAMETER_COLUMNS
    ids, cids, rows, ys = [], [], [], []
    for d in sorted(stats):
        for cid, cfg in configs.items():
            ids.append(d)
            cids.append(cid)
            rows.append(np.concatenate([stats[d], landmarkers[d], np.array(cfg.to_row(), dtype=float)]))
            ys.append(ratings[(d, cid)])
    return MetaDataset(ids, cids, np.vstack(rows), np.array(ys), columns)


def write_meta_dataset(data: MetaDataset, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("dataset_id", "config_id") + data.column_names + ("rating",))
        for d, c, row, r in zip(data.dataset_ids, data.config_ids, data.X, data.y):
            w.writerow([d, c] + [fmt_float(v) for v in row] + [fmt_float(r)])


def read_meta_dataset(path) -> MetaDataset:
    header, body = _read_csv(path)
    if header[:2] != ["dataset_id", "config_id"] or header[-1] != "rating":
        raise SchemaError(f"{path}: header must be dataset_id,config_id,<features>,rating")
    columns = header[2:-1]
    missing = [c for c in LANDMARKER_COLUMNS + HYPERPARAMETER_COLUMNS if c not in columns]
    if missing:
        raise SchemaError(f"{path}: missing feature columns {missing}")
    X = np.empty((len(body), len(columns)))
    y = np.empty(len(body))
    for i, row in enumerate(body):
        line = i + 2
        X[i] = [_number(path, line, c, v) for c, v in zip(columns, row[2:-1])]
        y[i] = _number(path, line, "rating", row[-1])
    return MetaDataset([r[0] for r in body], [r[1] for r in body], X, y, columns)
