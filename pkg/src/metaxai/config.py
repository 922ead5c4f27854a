"""Run configuration and seed derivation.

Every random component gets its own seed derived from the root seed and a
component name, so changing one component's settings never shifts another
component's random stream::

    derive_seed(root, "surrogate")    # boosting row subsamples
    derive_seed(root, "importance")   # permutations
    derive_seed(root, "interactions") # H-statistic eval-row subsample
    derive_seed(root, "configs")      # configuration sampler
"""
from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import MetaXAIError
from .meta_data import HYPERPARAMETER_COLUMNS
from .surrogate import SurrogateParams


def derive_seed(root: int, name: str) -> int:
    """Deterministic 32-bit seed for component ``name`` under ``root``."""
    ss = np.random.SeedSequence([int(root), zlib.crc32(name.encode())])
    return int(ss.generate_state(1)[0])


@dataclass
class SurrogateSection:
    n_trees: int = 500
    learn_rate: float = 0.05
    max_depth: int | None = 10
    min_node: int = 5
    subsample: float = 0.5


@dataclass
class ImportanceSection:
    B: int = 25
    top: int = 15
    mode: str = "full"  # "full": full-data model on its training rows; "folds": LODO aggregate
    method: str = "spearman"


@dataclass
class InteractionSection:
    eval_cap: int | None = 500
    top: int = 15
    groups: list | None = None  # e.g. ["Hyperparameter", "Statistical"]


@dataclass
class ProfileSection:
    features: list = field(default_factory=lambda: list(HYPERPARAMETER_COLUMNS))
    k: int = 3
    n_grid: int = 51
    mode: str = "default"


@dataclass
class InfluenceSection:
    test: str | None = None  # None: first dataset in sorted order
    feature: str = "shrinkage"


_SECTIONS = {
    "surrogate": SurrogateSection,
    "importance": ImportanceSection,
    "interactions": InteractionSection,
    "profiles": ProfileSection,
    "influence": InfluenceSection,
}


def _build(cls, values: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise MetaXAIError(f"unknown keys in {where}: {', '.join(unknown)}")
    return cls(**values)


@dataclass
class RunConfig:
    stat_csv: str | None = None
    eval_csv: str | None = None
    config_csv: str | None = None
    n_statistical: int = 38
    seed: int = 0
    jobs: int = 1
    out: str = "out"
    surrogate: SurrogateSection = field(default_factory=SurrogateSection)
    importance: ImportanceSection = field(default_factory=ImportanceSection)
    interactions: InteractionSection = field(default_factory=InteractionSection)
    profiles: ProfileSection = field(default_factory=ProfileSection)
    influence: InfluenceSection = field(default_factory=InfluenceSection)

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2 ** 64:
            raise MetaXAIError("seed must be an unsigned 64-bit integer")
        if self.jobs < 1:
            raise MetaXAIError("jobs must be >= 1")

    def surrogate_params(self) -> SurrogateParams:
        return SurrogateParams(**asdict(self.surrogate), seed=derive_seed(self.seed, "surrogate"))

    def seed_for(self, name: str) -> int:
        return derive_seed(self.seed, name)

    def to_dict(self, *, portable: bool = False) -> dict:
        """Plain dict; ``portable`` drops settings that do not affect results (out, jobs)."""
        d = asdict(self)
        if portable:
            d.pop("out")
            d.pop("jobs")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        for name, section in _SECTIONS.items():
            if name in d:
                d[name] = _build(section, d[name] or {}, name)
        return _build(cls, d, "config")

    def save(self, path, *, portable: bool = False) -> None:
        Path(path).write_text(json.dumps(self.to_dict(portable=portable), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise MetaXAIError(f"{path}: invalid JSON ({e})") from None
        if not isinstance(doc, dict):
            raise MetaXAIError(f"{path}: config must be a JSON object")
        return cls.from_dict(doc)
