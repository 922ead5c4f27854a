import csv
import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from metaxai.errors import (
    DegenerateBlockError,
    DegenerateRatioError,
    JoinError,
    MetaXAIError,
    ParseError,
    SchemaError,
)
from metaxai.fixture import PUBLISHED_LANDMARKERS
from metaxai.meta_data import (
    DEFAULT_CONFIG,
    DEFAULT_RANGES,
    HYPERPARAMETER_COLUMNS,
    LANDMARKER_COLUMNS,
    EvaluationRecord,
    FeatureGroup,
    HyperparameterConfig,
    assemble_meta_dataset,
    compute_landmarkers,
    rank_normalize,
    read_meta_dataset,
    sample_configs,
    write_meta_dataset,
)


def brute_force_ratings(table):
    """table: {dataset: {split: {model: auc}}}; ranks by pairwise counting."""
    out = {}
    for d, splits in table.items():
        acc = {}
        for block in splits.values():
            n = len(block)
            for m, a in block.items():
                below = sum(1 for b in block.values() if b < a)
                tied = sum(1 for b in block.values() if b == a)  # includes m itself
                rank = below + (tied + 1) / 2
                acc.setdefault(m, []).append((rank - 1) / (n - 1))
        for m, v in acc.items():
            out[(d, m)] = sum(v) / len(v)
    return out


def to_records(table):
    return [EvaluationRecord(d, m, s, a) for d, sp in table.items() for s, b in sp.items() for m, a in b.items()]


auc_values = st.sampled_from([0.5, 0.6, 0.7, 0.75, 0.8, 0.9])


@given(st.lists(auc_values, min_size=60, max_size=60))
def test_rank_normalize_matches_brute_force(values):
    # 4 datasets x 3 splits x 5 configs, coarse values force ties
    it = iter(values)
    table = {f"d{d}": {s: {f"c{c}": next(it) for c in range(5)} for s in range(3)} for d in range(4)}
    got = rank_normalize(to_records(table))
    want = brute_force_ratings(table)
    assert got.keys() == want.keys()
    for k in want:
        assert abs(got[k] - want[k]) < 1e-15


def test_rank_normalize_ties_get_average_rank():
    table = {"d": {0: {"a": 0.9, "b": 0.7, "c": 0.7, "e": 0.1}}}
    got = rank_normalize(to_records(table))
    assert got[("d", "a")] == 1.0
    assert got[("d", "b")] == got[("d", "c")] == 0.5
    assert got[("d", "e")] == 0.0


def test_rank_normalize_invariant_under_monotone_transform(rng):
    table = {"d": {s: {f"c{i}": float(rng.uniform()) for i in range(7)} for s in range(4)}}
    warped = {"d": {s: {m: a ** 3 for m, a in b.items()} for s, b in table["d"].items()}}
    assert rank_normalize(to_records(table)) == rank_normalize(to_records(warped))


def test_rank_normalize_errors():
    with pytest.raises(SchemaError):
        rank_normalize([])
    with pytest.raises(DegenerateBlockError):
        rank_normalize([EvaluationRecord("d", "a", 0, 0.5)])
    recs = to_records({"d": {0: {"a": 0.5, "b": 0.6}, 1: {"a": 0.5, "c": 0.6}}})
    with pytest.raises(SchemaError, match="split 1"):
        rank_normalize(recs)
    dup = to_records({"d": {0: {"a": 0.5, "b": 0.6}}}) + [EvaluationRecord("d", "a", 0, 0.7)]
    with pytest.raises(SchemaError, match="duplicate"):
        rank_normalize(dup)


def test_evaluation_record_validation():
    with pytest.raises(MetaXAIError):
        EvaluationRecord("d", "m", 0, 1.5)
    with pytest.raises(MetaXAIError):
        EvaluationRecord("d", "m", -1, 0.5)


def test_landmarker_ratio_hand_computed():
    # one split, ranks: knn 1, glmnet 2, gbm 3, ranger 4, randomForest 5 -> scaled (r-1)/4
    block = {"knn": 0.1, "glmnet": 0.2, "gbm_default": 0.3, "ranger": 0.4, "randomForest": 0.5}
    lm = compute_landmarkers(to_records({"d": {0: block}}))["d"]
    assert lm == pytest.approx((0 / 0.5, 0.25 / 0.5, 0.75 / 0.5, 1.0 / 0.5), abs=1e-15)


def test_landmarker_degenerate_ratio():
    block = {"knn": 0.1, "glmnet": 0.2, "gbm_default": 0.05, "ranger": 0.4, "randomForest": 0.5}
    with pytest.raises(DegenerateRatioError):
        compute_landmarkers(to_records({"d": {0: block}}))


def test_landmarker_missing_model():
    block = {"knn": 0.1, "glmnet": 0.2, "gbm_default": 0.3, "ranger": 0.4}
    with pytest.raises(SchemaError, match="randomForest"):
        compute_landmarkers(to_records({"d": {0: block}}))


def test_fixture_landmarkers_round_to_published(fixture_data):
    cols = [fixture_data.column_index(c) for c in LANDMARKER_COLUMNS]
    for d, published in PUBLISHED_LANDMARKERS.items():
        row = fixture_data.X[fixture_data.mask(d)][0, cols]
        assert tuple(np.round(row, 2)) == pytest.approx(published, abs=1e-9), d


def test_fixture_shape(fixture_data):
    assert fixture_data.X.shape == (2020, 47)
    assert len(fixture_data.datasets) == 20
    groups = fixture_data.groups()
    assert [len(groups[g.value]) for g in FeatureGroup] == [5, 4, 38]
    assert np.all((fixture_data.y >= 0) & (fixture_data.y <= 1))


def test_rows_ordered_by_dataset_then_config(fixture_data):
    ids = list(fixture_data.dataset_ids)
    assert ids == sorted(ids)
    first = fixture_data.config_ids[fixture_data.mask(ids[0])]
    assert list(first[:3]) == ["c000", "c001", "c002"] and first[-1] == "default"


def test_meta_dataset_roundtrip_is_byte_identical(fixture_data, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_meta_dataset(fixture_data, a)
    back = read_meta_dataset(a)
    np.testing.assert_array_equal(back.X, fixture_data.X)
    np.testing.assert_array_equal(back.y, fixture_data.y)
    write_meta_dataset(back, b)
    assert a.read_bytes() == b.read_bytes()


def _copy_csv(src, dst, edit):
    with open(src, newline="") as fh:
        rows = list(csv.reader(fh))
    rows = edit(rows)
    with open(dst, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)
    return dst


def test_ingest_rejects_unparseable_value(fixture_paths, tmp_path):
    def edit(rows):
        rows[3][2] = "n/a"
        return rows
    bad = _copy_csv(fixture_paths["stat_csv"], tmp_path / "s.csv", edit)
    with pytest.raises(ParseError) as e:
        assemble_meta_dataset(bad, fixture_paths["eval_csv"], fixture_paths["config_csv"])
    assert e.value.row == 4 and e.value.value == "n/a"


def test_ingest_rejects_dataset_mismatch(fixture_paths, tmp_path):
    bad = _copy_csv(fixture_paths["stat_csv"], tmp_path / "s.csv", lambda rows: rows[:-1])
    with pytest.raises(JoinError) as e:
        assemble_meta_dataset(bad, fixture_paths["eval_csv"], fixture_paths["config_csv"])
    assert len(e.value.ids) == 1


def test_ingest_rejects_missing_config_evaluations(fixture_paths, tmp_path):
    bad = _copy_csv(fixture_paths["eval_csv"], tmp_path / "e.csv",
                    lambda rows: [r for r in rows if not (r[0] == "37" and r[1] == "c005")])
    with pytest.raises(JoinError, match="c005"):
        assemble_meta_dataset(fixture_paths["stat_csv"], bad, fixture_paths["config_csv"])


def test_ingest_rejects_wrong_stat_count(fixture_paths, tmp_path):
    bad = _copy_csv(fixture_paths["stat_csv"], tmp_path / "s.csv", lambda rows: [r[:-1] for r in rows])
    with pytest.raises(SchemaError, match="38"):
        assemble_meta_dataset(bad, fixture_paths["eval_csv"], fixture_paths["config_csv"])


def test_ingest_rejects_unknown_model(fixture_paths, tmp_path):
    bad = _copy_csv(fixture_paths["eval_csv"], tmp_path / "e.csv", lambda rows: rows + [["37", "xgb", "0", "0.5"]])
    with pytest.raises(SchemaError, match="xgb"):
        assemble_meta_dataset(fixture_paths["stat_csv"], bad, fixture_paths["config_csv"])


def test_config_validation():
    with pytest.raises(MetaXAIError):
        HyperparameterConfig(0.0, 1, 100, 0.5, 10)
    with pytest.raises(MetaXAIError):
        HyperparameterConfig(0.1, 1, 100, 1.5, 10)
    assert DEFAULT_CONFIG.to_row() == (0.1, 1, 100, 0.5, 10)


def test_sampler_deterministic_and_in_range():
    a = sample_configs(500, 7)
    assert a == sample_configs(500, 7)
    assert a != sample_configs(500, 8)
    for c in a:
        for name, v in zip(HYPERPARAMETER_COLUMNS, c.to_row()):
            lo, hi = DEFAULT_RANGES[name]
            assert lo <= v <= hi
    assert sample_configs(3, 1, append_default=True)[-1] == DEFAULT_CONFIG


def test_sampler_marginals():
    rows = np.array([c.to_row() for c in sample_configs(4000, 3)])
    shrink = np.log(rows[:, 0])
    lo, hi = np.log(DEFAULT_RANGES["shrinkage"])
    assert stats.kstest(shrink, stats.uniform(lo, hi - lo).cdf).pvalue > 0.001
    bag = rows[:, 3]
    assert stats.kstest(bag, stats.uniform(0.2, 0.8).cdf).pvalue > 0.001
    depth_counts = np.bincount(rows[:, 1].astype(int), minlength=6)[1:]
    assert stats.chisquare(depth_counts).pvalue > 0.001
    assert set(np.unique(rows[:, 4])) == set(range(3, 26))


def test_sampler_rejects_bad_ranges():
    bad = dict(DEFAULT_RANGES, shrinkage=(0.1, 0.01))
    with pytest.raises(MetaXAIError):
        sample_configs(5, 0, bad)
    with pytest.raises(MetaXAIError):
        sample_configs(5, 0, dict(DEFAULT_RANGES, shrinkage=(0.0, 0.1)))
    with pytest.raises(MetaXAIError):
        sample_configs(0, 0)


def test_without_and_only(fixture_data):
    d = fixture_data.datasets[0]
    assert len(fixture_data.without(d)) == 1919
    assert set(fixture_data.only(d).dataset_ids) == {d}
    inst = fixture_data.only(d).instances[0]
    np.testing.assert_array_equal(inst.features(), fixture_data.X[fixture_data.mask(d)][0])


def test_rank_count_identity():
    # across all (dataset, split) combinations every block's scaled ranks average to 1/2
    table = {f"d{d}": {s: {f"c{c}": (c * 7 + s * 3 + d) % 5 / 5 for c in range(6)} for s in range(3)}
             for d in range(2)}
    r = rank_normalize(to_records(table))
    for d in table:
        assert np.mean([v for (dd, _), v in r.items() if dd == d]) == pytest.approx(0.5)
    assert all(0 <= v <= 1 for v in r.values())
    assert len(list(itertools.chain(r))) == 12
