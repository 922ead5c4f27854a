"""Command line: ingest -> train -> explain, plus config sampling, rendering and a synthetic fixture.

Output layout under ``--out``::

    meta_dataset.csv            ingest
    configs.csv                 sample-configs
    models/fold_<id>.json       train (one per held-out dataset)
    models/full.json            train (all datasets)
    cv_report.csv, fold_audit.json
    run_config.json             effective settings of the last train/explain
    explain/<report>.csv|json   explain <kind>
    explain/<figure>.svg        explain <kind>, or render

Exit codes: 0 success, 1 invalid data or settings, 2 usage error or missing file.
"""
from __future__ import annotations

import argparse
import json
import re
import sys
import warnings
from pathlib import Path

import numpy as np

from . import plots
from .config import RunConfig
from .errors import MetaXAIError
from .fixture import write_fixture
from .importance import (
    Dendrogram,
    aggregate_importance,
    feature_set_importance,
    grouped_importance,
    permutation_importance,
    read_importance_csv,
    triplot,
    write_importance_csv,
)
from .influence import influence_analysis, read_influence_csv, write_influence_csv
from .interactions import eval_subsample, overall_interactions, top_interactions, write_interactions_csv
from .meta_data import (
    assemble_meta_dataset,
    group_of,
    read_meta_dataset,
    sample_configs,
    write_config_table,
    write_meta_dataset,
)
from .profiles import (
    PROFILES_HEADER,
    Profile,
    cluster_profiles,
    make_grid,
    profile_matrix,
    profile_rows,
    read_profiles_csv,
    write_profiles_csv,
    write_warm_starts_csv,
)
from .surrogate import BoostedEnsemble, fit, lodo_cv

KINDS = ("importance", "groups", "triplot", "interactions", "profiles", "influence")
_SAFE_ID = re.compile(r"^[A-Za-z0-9._-]+$")


class UsageError(Exception):
    pass


def _need(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(2, "No such file or directory", str(path))
    return path


def _group(name: str) -> str:
    return group_of(name).value


# ------------------------------------------------------------------ commands


def cmd_fixture(cfg: RunConfig, args) -> None:
    paths = write_fixture(Path(cfg.out) / "fixture", args.fixture_seed)
    for p in paths.values():
        print(f"wrote {p}")


def cmd_ingest(cfg: RunConfig, args) -> None:
    stat = args.stat or cfg.stat_csv
    ev = args.eval or cfg.eval_csv
    conf = args.configs or cfg.config_csv
    if not (stat and ev and conf):
        raise UsageError("ingest needs --stat, --eval and --configs (or the same paths in --config)")
    data = assemble_meta_dataset(_need(stat), _need(ev), _need(conf), cfg.n_statistical)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_meta_dataset(data, out / "meta_dataset.csv")
    print(f"rows {len(data)}, datasets {len(data.datasets)}, configs {len(set(data.config_ids))}, "
          f"features {len(data.column_names)}")
    print(f"wrote {out / 'meta_dataset.csv'}")


def cmd_sample_configs(cfg: RunConfig, args) -> None:
    configs = sample_configs(args.n, cfg.seed_for("configs"), append_default=args.append_default)
    ids = [f"c{i:03d}" for i in range(args.n)] + (["default"] if args.append_default else [])
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_config_table(configs, out / "configs.csv", ids)
    print(f"wrote {out / 'configs.csv'} ({len(configs)} configurations)")


def _meta_path(cfg, args) -> Path:
    return _need(args.meta or Path(cfg.out) / "meta_dataset.csv")


def _model_file(models_dir: Path, dataset_id: str) -> Path:
    if not _SAFE_ID.match(dataset_id):
        raise MetaXAIError(f"dataset id {dataset_id!r} cannot be used in a file name")
    return models_dir / f"fold_{dataset_id}.json"


def cmd_train(cfg: RunConfig, args) -> None:
    data = read_meta_dataset(_meta_path(cfg, args))
    params = cfg.surrogate_params()
    out = Path(cfg.out)
    models_dir = out / "models"
    models_dir.mkdir(parents=True, exist_ok=True)
    report, models = lodo_cv(data, params, jobs=cfg.jobs)
    for d, model in models.items():
        model.save(_model_file(models_dir, d))
    fit(data.X, data.y, params, data.column_names).save(models_dir / "full.json")
    report.to_csv(out / "cv_report.csv")
    audit = {f.dataset_id: list(f.train_datasets) for f in report.folds}
    (out / "fold_audit.json").write_text(json.dumps(audit, indent=1, sort_keys=True) + "\n")
    cfg.save(out / "run_config.json", portable=True)
    print(f"LODO mean MSE {report.mean_mse:.6g}, mean Spearman {report.mean_spearman:.4f}")
    print(f"wrote {len(models) + 1} models to {models_dir}")


def _load_full(models_dir: Path) -> BoostedEnsemble:
    return BoostedEnsemble.load(_need(models_dir / "full.json"))


def _load_folds(models_dir: Path, datasets) -> dict:
    missing = [d for d in datasets if not _model_file(models_dir, d).exists()]
    if missing:
        raise MetaXAIError(f"missing fold models in {models_dir} for datasets: {', '.join(missing)}")
    return {d: BoostedEnsemble.load(_model_file(models_dir, d)) for d in datasets}


class _Session:
    """Lazily loaded inputs shared by the explainers of one invocation."""

    def __init__(self, cfg: RunConfig, args):
        self.cfg, self.args = cfg, args
        self.out = Path(cfg.out) / "explain"
        self.models_dir = Path(args.models) if args.models else Path(cfg.out) / "models"
        self._data = self._full = self._folds = None
        self.single = None

    @property
    def data(self):
        if self._data is None:
            self._data = read_meta_dataset(_meta_path(self.cfg, self.args))
        return self._data

    @property
    def full(self):
        if self._full is None:
            self._full = _load_full(self.models_dir)
        return self._full

    @property
    def folds(self):
        if self._folds is None:
            self._folds = _load_folds(self.models_dir, self.data.datasets)
        return self._folds


def _fold_importance(s: _Session, sets, B, seed):
    """Per-fold dropout on each held-out dataset's own rows, aggregated across folds."""
    per_fold = {}
    for d in s.data.datasets:
        part = s.data.only(d)
        per_fold[d] = feature_set_importance(s.folds[d], part.X, part.y, sets, feature_names=s.data.column_names,
                                             B=B, seed=seed)
    return aggregate_importance(per_fold)


def _write_per_fold(records, path) -> None:
    lines = ["feature_set,dataset_id,dropout"]
    for r in records:
        for d, v in r.per_fold.items():
            lines.append(f"{r.name},{d},{format(v, '.17g')}")
    path.write_text("\n".join(lines) + "\n")


def explain_importance(s: _Session) -> None:
    ic = s.cfg.importance
    seed = s.cfg.seed_for("importance")
    if ic.mode == "full":
        print(f"importance: full-data model evaluated on its {len(s.data)} training rows")
        records = permutation_importance(s.full, s.data.X, s.data.y, B=ic.B, seed=seed)
        s.single = records
    elif ic.mode == "folds":
        print("importance: each fold model evaluated on its held-out dataset's rows, averaged over folds")
        records = _fold_importance(s, [(f,) for f in s.data.column_names], ic.B, seed)
        _write_per_fold(records, s.out / "importance_per_fold.csv")
    else:
        raise MetaXAIError(f"unknown importance mode {ic.mode!r}")
    write_importance_csv(records[:ic.top], s.out / "importance.csv", _group)
    render_importance(s.out)


def explain_groups(s: _Session) -> None:
    ic = s.cfg.importance
    seed = s.cfg.seed_for("importance")
    groups = s.data.groups()
    if ic.mode == "full":
        records = grouped_importance(s.full, s.data.X, s.data.y, groups, B=ic.B, seed=seed)
    else:
        records = _fold_importance(s, [tuple(m) for m in groups.values()], ic.B, seed)
        for r in records:
            r.group = next(g for g, m in groups.items() if tuple(m) == r.feature_set)
        _write_per_fold(records, s.out / "groups_per_fold.csv")
    write_importance_csv(records, s.out / "groups.csv")
    render_groups(s.out)


def explain_triplot(s: _Session) -> None:
    ic = s.cfg.importance
    known = s.single if (s.single is not None and ic.mode == "full") else ()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        tree = triplot(s.full, s.data.X, s.data.y, B=ic.B, seed=s.cfg.seed_for("importance"),
                       method=ic.method, known=known)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    tree.to_json(s.out / "triplot.json")
    render_triplot(s.out)


def explain_interactions(s: _Session) -> None:
    ic = s.cfg.interactions
    rows = eval_subsample(len(s.data), ic.eval_cap, s.cfg.seed_for("interactions"))
    sample = s.data.X[rows]
    print(f"interactions: {len(rows)} rows used as PD background and evaluation points")
    overall = overall_interactions(s.full, sample, groups=_group)
    pairs = top_interactions(s.full, sample, ic.top, tuple(ic.groups) if ic.groups else None, groups=_group)
    write_interactions_csv(pairs, s.out / "interactions.csv")
    write_interactions_csv(overall, s.out / "interactions_overall.csv")
    render_interactions(s.out)


def explain_profiles(s: _Session) -> None:
    pc = s.cfg.profiles
    audit_path = Path(s.cfg.out) / "fold_audit.json"
    audit = json.loads(audit_path.read_text()) if audit_path.exists() else None
    all_profiles, clusterings = [], {}
    for feature in pc.features:
        grid = make_grid(s.data, feature, pc.n_grid)
        profs = profile_matrix(s.folds, s.data, feature, grid, mode=pc.mode, audit=audit)
        clusterings[feature] = cluster_profiles(profs, pc.k)
        all_profiles.append(profs)
    lines = [PROFILES_HEADER]
    for feature, profs in zip(pc.features, all_profiles):
        lines += profile_rows(profs, clusterings[feature])
    (s.out / "profiles.csv").write_text("\n".join(lines) + "\n")
    write_warm_starts_csv([p for profs in all_profiles for p in profs], s.out / "warm_starts.csv")
    render_profiles(s.out)


def explain_influence(s: _Session) -> None:
    fc = s.cfg.influence
    test = fc.test if fc.test is not None else s.data.datasets[0]
    if test not in s.data.datasets:
        raise MetaXAIError(f"test dataset {test} not in meta-data")
    full = BoostedEnsemble.load(_need(_model_file(s.models_dir, test)))
    grid = make_grid(s.data, fc.feature, s.cfg.profiles.n_grid)
    result = influence_analysis(s.data, s.cfg.surrogate_params(), test, fc.feature, grid,
                                full_model=full, jobs=s.cfg.jobs, mode=s.cfg.profiles.mode)
    write_influence_csv(result.records, s.out / "influence.csv")
    profs = [Profile("full", result.full_profile.feature, grid, result.full_profile.predictions)]
    profs += [Profile(d, p.feature, grid, p.predictions) for d, p in sorted(result.reduced_profiles.items())]
    write_profiles_csv(profs, s.out / "influence_profiles.csv")
    print(f"influence: test dataset {test}, {result.audit['reduced_fits']} reduced models")
    render_influence(s.out)


EXPLAINERS = {
    "importance": explain_importance,
    "groups": explain_groups,
    "triplot": explain_triplot,
    "interactions": explain_interactions,
    "profiles": explain_profiles,
    "influence": explain_influence,
}


def cmd_explain(cfg: RunConfig, args) -> None:
    kinds = KINDS if args.kind == "all" else (args.kind,)
    s = _Session(cfg, args)
    s.out.mkdir(parents=True, exist_ok=True)
    for kind in kinds:
        EXPLAINERS[kind](s)
        print(f"explain {kind}: done")
    cfg.save(Path(cfg.out) / "run_config.json", portable=True)


# ------------------------------------------------------------------ render


def render_importance(d: Path) -> None:
    rows = read_importance_csv(_need(d / "importance.csv"))
    plots.bar_chart([r["feature_set"] for r in rows], [float(r["dropout_mean"]) for r in rows],
                    d / "importance.svg", errors=[float(r["dropout_sd"]) for r in rows],
                    groups=[r["group"] for r in rows], title="Permutation importance",
                    xlabel="dropout of MSE")


def render_groups(d: Path) -> None:
    rows = read_importance_csv(_need(d / "groups.csv"))
    plots.bar_chart([r["group"] or r["feature_set"] for r in rows], [float(r["dropout_mean"]) for r in rows],
                    d / "groups.svg", errors=[float(r["dropout_sd"]) for r in rows],
                    groups=[r["group"] for r in rows], title="Grouped permutation importance",
                    xlabel="dropout of MSE")


def render_triplot(d: Path) -> None:
    tree = Dendrogram.from_json(_need(d / "triplot.json"))
    plots.triplot_chart(tree, d / "triplot.svg", groups={leaf.members[0]: _group(leaf.members[0])
                                                          for leaf in tree.leaves}, title="Triplot")


def _read_interactions(path: Path) -> list[dict]:
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    return [dict(zip(header, r.split(","))) for r in lines[1:] if r]


def _pair_color(ga: str, gb: str) -> str:
    if ga == gb:
        return plots.GROUP_COLORS.get(ga, plots.GROUP_COLORS[""])
    return {"Hyperparameter|Statistical": "#9467bd", "Hyperparameter|Landmarker": "#ff7f0e",
            "Landmarker|Statistical": "#17becf"}.get("|".join(sorted((ga, gb))), plots.GROUP_COLORS[""])


def render_interactions(d: Path) -> None:
    pairs = _read_interactions(_need(d / "interactions.csv"))
    plots.bar_chart([f"{r['feature_a']}:{r['feature_b']}" for r in pairs], [float(r["h_squared"]) for r in pairs],
                    d / "interactions.svg", colors=[_pair_color(r["group_a"], r["group_b"]) for r in pairs],
                    title="Pairwise H-statistic (purple: hyperparameter x statistical)", xlabel="H squared")
    overall = _read_interactions(_need(d / "interactions_overall.csv"))
    plots.bar_chart([r["feature_a"] for r in overall], [float(r["h_squared"]) for r in overall],
                    d / "interactions_overall.svg", groups=[r["group_a"] for r in overall],
                    title="Overall H-statistic", xlabel="H squared")


def render_profiles(d: Path) -> None:
    profiles, labels = read_profiles_csv(_need(d / "profiles.csv"))
    for feature in sorted({p.feature for p in profiles}):
        profs = sorted((p for p in profiles if p.feature == feature), key=lambda p: p.dataset_id)
        feat_labels = {p.dataset_id: labels[(p.dataset_id, feature)] for p in profs
                       if (p.dataset_id, feature) in labels}
        aggregated = {}
        for label in sorted(set(feat_labels.values())):
            members = np.vstack([p.predictions for p in profs if feat_labels.get(p.dataset_id) == label])
            aggregated[label] = Profile(label, feature, profs[0].grid, members.mean(axis=0))
        plots.profile_chart(profs, d / f"profiles_{feature}.svg", clusters=feat_labels, aggregated=aggregated,
                            title=f"Ceteris Paribus profiles: {feature}")


def render_influence(d: Path) -> None:
    records = read_influence_csv(_need(d / "influence.csv"))
    profiles, _ = read_profiles_csv(_need(d / "influence_profiles.csv"))
    full = next((p for p in profiles if p.dataset_id == "full"), None)
    reduced = {p.dataset_id: p for p in profiles if p.dataset_id != "full"}
    plots.influence_chart(records, full, reduced, d / "influence.svg", title="Dataset influence")


RENDERERS = {
    "importance": render_importance,
    "groups": render_groups,
    "triplot": render_triplot,
    "interactions": render_interactions,
    "profiles": render_profiles,
    "influence": render_influence,
}
_RENDER_INPUT = {
    "importance": "importance.csv",
    "groups": "groups.csv",
    "triplot": "triplot.json",
    "interactions": "interactions.csv",
    "profiles": "profiles.csv",
    "influence": "influence.csv",
}


def cmd_render(cfg: RunConfig, args) -> None:
    d = Path(args.dir) if args.dir else Path(cfg.out) / "explain"
    _need(d)
    done = 0
    for kind, fn in RENDERERS.items():
        if (d / _RENDER_INPUT[kind]).exists():
            fn(d)
            done += 1
            print(f"rendered {kind}")
    if not done:
        raise MetaXAIError(f"no reports to render in {d}")


# ------------------------------------------------------------------ parser


def _globals(parser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="JSON run configuration")
    parser.add_argument("--seed", type=int, default=default, help="root seed (unsigned 64-bit)")
    parser.add_argument("--jobs", type=int, default=default, help="worker processes")
    parser.add_argument("--out", default=default, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metaxai", description="Explainable meta-learning surrogate pipeline")
    _globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fixture", help="write the synthetic 20-dataset input tables to <out>/fixture")
    p.add_argument("--fixture-seed", type=int, default=2021)
    p = sub.add_parser("ingest", help="build meta_dataset.csv from the input tables")
    p.add_argument("--stat")
    p.add_argument("--eval")
    p.add_argument("--configs")
    p = sub.add_parser("sample-configs", help="draw random gbm configurations")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--append-default", action="store_true")
    p = sub.add_parser("train", help="LODO fold models, full model and CV report")
    p.add_argument("--meta")
    p = sub.add_parser("explain", help="explanation reports and figures")
    p.add_argument("kind", choices=KINDS + ("all",))
    p.add_argument("--meta")
    p.add_argument("--models", help="model directory (default <out>/models)")
    p.add_argument("--top", type=int, help="rows in importance / interaction reports")
    p.add_argument("--B", type=int, help="permutation replications")
    p.add_argument("--mode", choices=("full", "folds"), help="importance model and rows")
    p.add_argument("--feature", help="hyperparameter to profile / for influence")
    p.add_argument("--k", type=int, help="profile clusters")
    p.add_argument("--test", help="test dataset for influence")
    p = sub.add_parser("render", help="re-render SVGs from existing reports")
    p.add_argument("--dir", help="report directory (default <out>/explain)")
    for p in sub.choices.values():
        _globals(p, suppress=True)
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(_need(args.config)) if args.config else RunConfig()
    d = cfg.to_dict()
    for key in ("seed", "jobs", "out"):
        if getattr(args, key, None) is not None:
            d[key] = getattr(args, key)
    if args.command == "explain":
        if args.top is not None:
            d["importance"]["top"] = d["interactions"]["top"] = args.top
        if args.B is not None:
            d["importance"]["B"] = args.B
        if args.mode is not None:
            d["importance"]["mode"] = args.mode
        if args.k is not None:
            d["profiles"]["k"] = args.k
        if args.feature is not None:
            d["profiles"]["features"] = [args.feature]
            d["influence"]["feature"] = args.feature
        if args.test is not None:
            d["influence"]["test"] = args.test
    return RunConfig.from_dict(d)


COMMANDS = {
    "fixture": cmd_fixture,
    "ingest": cmd_ingest,
    "sample-configs": cmd_sample_configs,
    "train": cmd_train,
    "explain": cmd_explain,
    "render": cmd_render,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        COMMANDS[args.command](cfg, args)
    except FileNotFoundError as e:
        print(f"error: file not found: {e.filename}", file=sys.stderr)
        return 2
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except MetaXAIError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
