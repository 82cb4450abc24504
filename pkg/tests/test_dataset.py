import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from galaxymorph.dataset import (
    DEFAULT_FEATURE_COLUMNS,
    Dataset,
    RawRecord,
    Schema,
    SplitSpec,
    StandardizationStats,
    apply_standardization,
    axis_centers,
    class_distribution,
    derive_label,
    generate_synthetic,
    parse_csv,
    split,
    split_indices,
    standardize,
    write_csv,
)
from galaxymorph.errors import DimensionError, EmptyInputError, SchemaError

from conftest import make_dataset
from oracles import scalar_distance

HEADER = ["objid", *DEFAULT_FEATURE_COLUMNS, "spiral", "elliptical", "uncertain"]


def write_rows(path, rows, header=HEADER):
    lines = [",".join(header)] + [",".join(str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")


def row(objid, flags, fill=0.5):
    return [objid, *([fill] * len(DEFAULT_FEATURE_COLUMNS)), *flags]


def record(s, e, u):
    return RawRecord(1, {}, s, e, u)


class TestDeriveLabel:
    def test_single_flags(self):
        assert derive_label(record(True, False, False)) == 0
        assert derive_label(record(False, True, False)) == 1
        assert derive_label(record(False, False, True)) == 2

    def test_no_flags_is_uncertain(self):
        assert derive_label(record(False, False, False)) == 2

    def test_no_flags_compat_fill(self):
        assert derive_label(record(False, False, False), missing_label=3) == 3

    @pytest.mark.parametrize("flags", [(True, True, False), (True, False, True), (True, True, True)])
    def test_multiple_flags_are_uncertain(self, flags):
        assert derive_label(record(*flags)) == 2
        assert derive_label(record(*flags), missing_label=3) == 2


class TestParseCsv:
    def test_spiral_row(self, tmp_path):
        p = tmp_path / "a.csv"
        write_rows(p, [row(1, (1, 0, 0))])
        ds, report = parse_csv(p)
        assert ds.labels.tolist() == [0]
        assert ds.n_features == 10
        assert report.rows_read == 1 and report.rows_rejected == 0

    def test_header_only_is_empty_input(self, tmp_path):
        p = tmp_path / "a.csv"
        write_rows(p, [])
        with pytest.raises(EmptyInputError):
            parse_csv(p)

    def test_empty_file(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("")
        with pytest.raises(EmptyInputError):
            parse_csv(p)

    def test_malformed_numeric_row_rejected(self, tmp_path):
        rows = [row(1, (1, 0, 0)), row(2, (0, 1, 0)), row(3, (0, 0, 1))]
        rows[1][3] = "abc"
        p = tmp_path / "a.csv"
        write_rows(p, rows)
        ds, report = parse_csv(p)
        assert len(ds) == 2
        assert ds.labels.tolist() == [0, 2]
        assert report.rows_read == 3
        assert report.rows_rejected == 1
        assert report.rejected[0]["line"] == 3

    def test_missing_column_named(self, tmp_path):
        p = tmp_path / "a.csv"
        header = [h for h in HEADER if h != "p_edge"]
        write_rows(p, [[1] + [0.5] * 9 + [1, 0, 0]], header)
        with pytest.raises(SchemaError, match="p_edge"):
            parse_csv(p)

    def test_uppercase_header_matches(self, tmp_path):
        p = tmp_path / "a.csv"
        write_rows(p, [row(1, (0, 1, 0))], [h.upper() for h in HEADER])
        ds, _ = parse_csv(p)
        assert ds.labels.tolist() == [1]

    def test_flags_excluded_from_features(self, tmp_path):
        p = tmp_path / "a.csv"
        write_rows(p, [row(1, (1, 0, 0))])
        ds, _ = parse_csv(p)
        assert not {"spiral", "elliptical", "uncertain"} & set(ds.feature_names)

    def test_nan_and_duplicate_id_rejected(self, tmp_path):
        rows = [row(1, (1, 0, 0)), row(1, (0, 1, 0)), row(2, (0, 0, 1))]
        rows[2][2] = "nan"
        p = tmp_path / "a.csv"
        write_rows(p, rows)
        ds, report = parse_csv(p)
        assert len(ds) == 1 and report.rows_rejected == 2
        assert np.all(np.isfinite(ds.features))

    def test_bad_flag_rejected(self, tmp_path):
        p = tmp_path / "a.csv"
        write_rows(p, [row(1, ("maybe", 0, 0)), row(2, ("True", "False", "False"))])
        ds, report = parse_csv(p)
        assert ds.labels.tolist() == [0] and report.rows_rejected == 1

    def test_bounded_columns(self, tmp_path):
        rows = [row(1, (1, 0, 0)), row(2, (0, 1, 0))]
        rows[1][2] = 1.5
        p = tmp_path / "a.csv"
        write_rows(p, rows)
        ds, report = parse_csv(p, Schema(bounded_columns=("p_el",)))
        assert len(ds) == 1 and report.rows_rejected == 1

    def test_fill_missing_label_compat(self, tmp_path):
        p = tmp_path / "a.csv"
        write_rows(p, [row(1, (0, 0, 0)), row(2, (1, 0, 0))])
        ds, report = parse_csv(p, Schema(fill_missing_label=3))
        assert ds.labels.tolist() == [3, 0]
        assert report.class_counts == [1, 0, 0, 1]

    def test_schema_from_json_mapping(self, tmp_path):
        cfg = tmp_path / "schema.json"
        cfg.write_text(json.dumps({
            "feature_columns": ["a", "b"],
            "flag_columns": {"spiral": "S", "elliptical": "E", "uncertain": "U"},
            "id_column": "id",
        }))
        data = tmp_path / "d.csv"
        write_rows(data, [[7, 0.1, 0.2, 0, 1, 0]], ["id", "a", "b", "S", "E", "U"])
        ds, _ = parse_csv(data, Schema.from_json(cfg))
        assert ds.feature_names == ("a", "b")
        assert ds.ids.tolist() == [7] and ds.labels.tolist() == [1]

    def test_flag_column_as_feature_refused(self):
        with pytest.raises(SchemaError):
            Schema(feature_columns=("spiral", "p_el"))


class TestRoundTrip:
    def test_write_then_parse(self, tmp_path, rng):
        ds = Dataset(rng.standard_normal((50, 10)) * 1e3, rng.integers(0, 3, 50), DEFAULT_FEATURE_COLUMNS, np.arange(50))
        p = tmp_path / "rt.csv"
        write_csv(ds, p)
        back, report = parse_csv(p)
        assert report.rows_rejected == 0
        assert np.max(np.abs(back.features - ds.features)) <= 1e-12
        assert np.array_equal(back.labels, ds.labels)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=10, max_size=10), st.integers(0, 2))
    def test_roundtrip_property(self, tmp_path_factory, values, label):
        ds = Dataset(np.array([values]), [label], DEFAULT_FEATURE_COLUMNS, [0])
        p = tmp_path_factory.mktemp("rt") / "x.csv"
        write_csv(ds, p)
        back, _ = parse_csv(p)
        assert np.array_equal(back.features, ds.features)
        assert back.labels.tolist() == [label]


class TestStandardize:
    def test_constant_column(self):
        ds = make_dataset([[1.0], [1.0], [1.0]], [0, 1, 2])
        out, stats = standardize(ds)
        assert out.features[:, 0].tolist() == [0.0, 0.0, 0.0]
        assert stats.std.tolist() == [1.0]

    def test_constant_non_representable_column(self):
        ds = make_dataset([[0.1], [0.1], [0.1]], [0, 1, 2])
        out, _ = standardize(ds)
        assert out.features[:, 0].tolist() == [0.0, 0.0, 0.0]

    def test_two_points(self):
        out, _ = standardize(make_dataset([[0.0], [2.0]], [0, 1]))
        assert out.features[:, 0].tolist() == [-1.0, 1.0]

    def test_moments(self, rng):
        ds = make_dataset(rng.standard_normal((100, 10)) * 7 + 3, rng.integers(0, 3, 100))
        out, _ = standardize(ds)
        # moments recomputed with plain sums, not numpy mean/std
        for j in range(10):
            col = [float(v) for v in out.features[:, j]]
            mean = math.fsum(col) / len(col)
            std = math.sqrt(math.fsum((v - mean) ** 2 for v in col) / len(col))
            assert abs(mean) < 1e-9
            assert abs(std - 1) < 1e-9

    def test_apply_matches_fit(self, rng):
        ds = make_dataset(rng.standard_normal((20, 4)), rng.integers(0, 3, 20))
        out, stats = standardize(ds)
        assert np.array_equal(apply_standardization(ds, stats).features, out.features)

    def test_dimension_mismatch(self, rng):
        ds = make_dataset(rng.standard_normal((5, 10)), [0] * 5)
        stats = StandardizationStats(np.zeros(9), np.ones(9))
        with pytest.raises(DimensionError):
            apply_standardization(ds, stats)

    def test_mean_row_maps_to_zero(self, rng):
        train = make_dataset(rng.standard_normal((30, 10)), [0] * 30)
        _, stats = standardize(train)
        held = make_dataset(stats.mean[None, :], [1])
        assert np.all(apply_standardization(held, stats).features == 0.0)


class TestSplit:
    def test_sizes(self):
        tr, te = split_indices(10, SplitSpec(0.7, 17))
        assert (len(tr), len(te)) == (7, 3)

    def test_survey_scale_sizes(self):
        tr, te = split_indices(60000, SplitSpec(0.7, 17))
        assert (len(tr), len(te)) == (42000, 18000)

    def test_deterministic(self):
        a = split_indices(100, SplitSpec(0.7, 17))
        b = split_indices(100, SplitSpec(0.7, 17))
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_seed_changes_partition(self):
        a = split_indices(100, SplitSpec(0.7, 17))[0]
        b = split_indices(100, SplitSpec(0.7, 18))[0]
        assert not np.array_equal(a, b)

    @given(st.integers(2, 500), st.floats(0.01, 0.99), st.integers(0, 2**32 - 1))
    def test_partition_property(self, n, frac, seed):
        tr, te = split_indices(n, SplitSpec(frac, seed))
        assert len(np.intersect1d(tr, te)) == 0
        assert sorted(np.concatenate([tr, te]).tolist()) == list(range(n))
        expected = min(max(math.floor(n * frac + 0.5), 1), n - 1)
        assert len(tr) == expected

    def test_too_small(self):
        with pytest.raises(ValueError):
            split(make_dataset([[1.0]], [0]))

    def test_split_datasets_carry_rows(self, rng):
        ds = make_dataset(rng.standard_normal((10, 2)), rng.integers(0, 3, 10))
        tr, te = split(ds)
        idx_tr, idx_te = split_indices(10, SplitSpec())
        assert np.array_equal(tr.features, ds.features[idx_tr])
        assert np.array_equal(te.labels, ds.labels[idx_te])

    def test_invalid_fraction(self):
        with pytest.raises(ValueError):
            SplitSpec(1.0)


class TestSynthetic:
    def test_three_rows_one_per_class(self):
        ds = generate_synthetic(3, axis_centers(10.0), 1.0, 0)
        assert sorted(ds.labels.tolist()) == [0, 1, 2]

    def test_tiny_spread_hits_centres(self):
        centers = axis_centers(10.0)
        ds = generate_synthetic(30, centers, 1e-300, 0)
        np.testing.assert_allclose(ds.features, centers[ds.labels], rtol=1e-15, atol=1e-290)

    @given(st.integers(3, 400))
    def test_balance(self, n):
        counts = class_distribution(generate_synthetic(n, axis_centers(5.0), 1.0, 1))
        assert counts.max() - counts.min() <= 1 and counts.sum() == n

    def test_deterministic(self):
        a = generate_synthetic(60, axis_centers(5.0), 1.0, 9)
        b = generate_synthetic(60, axis_centers(5.0), 1.0, 9)
        assert np.array_equal(a.features, b.features)

    def test_axis_centres_separation(self):
        c = axis_centers(7.0)
        for i in range(3):
            for j in range(i + 1, 3):
                assert scalar_distance(c[i], c[j]) == pytest.approx(7.0, rel=1e-12)

    def test_well_separated_one_nn_training_accuracy(self):
        ds = generate_synthetic(6000, axis_centers(10.0), 1.0, 5)
        # brute-force 1-NN on a subsample of query rows against the full set
        X = ds.features
        hits = 0
        rows = range(0, 6000, 20)
        for i in rows:
            dist = np.sqrt(((X - X[i]) ** 2).sum(axis=1))
            hits += ds.labels[int(np.argmin(dist))] == ds.labels[i]
        assert hits == len(rows)


class TestClassDistribution:
    def test_empty(self):
        ds = Dataset(np.zeros((0, 2)), [], ["a", "b"])
        assert class_distribution(ds).tolist() == [0, 0, 0]

    def test_counts(self):
        ds = make_dataset(np.zeros((4, 1)), [0, 0, 1, 2])
        assert class_distribution(ds).tolist() == [2, 1, 1]

    def test_balanced_synthetic(self):
        ds = generate_synthetic(6000, axis_centers(10.0), 1.0, 0)
        assert class_distribution(ds).tolist() == [2000, 2000, 2000]


class TestDatasetInvariants:
    def test_immutable(self, rng):
        ds = make_dataset(rng.standard_normal((3, 2)), [0, 1, 2])
        with pytest.raises(ValueError):
            ds.features[0, 0] = 1.0

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            make_dataset(np.zeros((3, 2)), [0, 1])

    def test_non_finite(self):
        with pytest.raises(ValueError):
            make_dataset([[np.inf]], [0])
