import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from biasprobe.data import (
    AttributeSpec,
    Dataset,
    SynthConfig,
    aggregate_snv,
    encode_snv,
    load_csv,
    make_biased_subset,
    removal_count,
    sample_percentage,
    save_csv,
    sidecar_path,
    split,
    synthesize,
    trim_group,
)
from biasprobe.errors import (
    ConfigError,
    InfeasibleError,
    ParseError,
    SizeError,
    UnknownNameError,
    VocabularyError,
)
from biasprobe.model import accuracy, train

from conftest import make_dataset


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def _gender(n_male, n_female, d=2, seed=0):
    rng = np.random.default_rng(seed)
    n = n_male + n_female
    return make_dataset(
        rng.random((n, d)),
        rng.integers(0, 2, n),
        k=2,
        attrs={"gender": np.array([0] * n_male + [1] * n_female)},
        groups={"gender": ("male", "female")},
    )


class TestLoadCsv:
    def test_small_file(self, tmp_path):
        p = _write(tmp_path / "d.csv", "sample_id,a,b,label\nx1,1,2,A\nx2,3,4,B\nx3,0,1,A\nx4,2,2,B\n")
        ds = load_csv(p)
        assert (ds.n, ds.d, ds.k) == (4, 2, 2)
        assert ds.feature_names == ("a", "b")
        assert ds.class_names == ("A", "B")

    def test_negative_values_are_min_shifted(self, tmp_path):
        p = _write(tmp_path / "d.csv", "sample_id,a,b,label\nx1,-3,2,A\nx2,1,4,B\n")
        ds = load_csv(p)
        assert ds.features[0, 0] == 0.0
        assert ds.features[1, 0] == 4.0
        assert ds.feature_shift.tolist() == [3.0, 0.0]

    def test_short_row_names_row(self, tmp_path):
        p = _write(tmp_path / "d.csv", "sample_id,a,b,label\nx1,1,2,A\nx2,3,B\n")
        with pytest.raises(ParseError) as info:
            load_csv(p)
        assert info.value.row == 3

    def test_non_numeric_names_column(self, tmp_path):
        p = _write(tmp_path / "d.csv", "sample_id,a,b,label\nx1,1,oops,A\nx2,3,1,B\n")
        with pytest.raises(ParseError) as info:
            load_csv(p)
        assert info.value.column == "b"

    def test_attribute_columns(self, tmp_path):
        p = _write(tmp_path / "d.csv", "sample_id,a,label,attr:gender\nx1,1,A,male\nx2,2,B,female\n")
        ds = load_csv(p)
        assert ds.group_names["gender"] == ("female", "male")
        assert sample_percentage(ds, "gender", "male") == 0.5

    def test_unknown_label_against_sidecar(self, tmp_path):
        p = _write(tmp_path / "d.csv", "sample_id,a,label\nx1,1,A\nx2,2,C\n")
        sidecar_path(p).write_text(json.dumps({"class_names": ["A", "B"], "attributes": {}, "feature_shift": [0]}))
        with pytest.raises(VocabularyError):
            load_csv(p)

    def test_round_trip(self, tmp_path, small_synth):
        p = save_csv(small_synth, tmp_path / "rt.csv")
        back = load_csv(p)
        np.testing.assert_array_equal(back.features, small_synth.features)
        np.testing.assert_array_equal(back.labels, small_synth.labels)
        for a in small_synth.attributes:
            np.testing.assert_array_equal(back.attributes[a], small_synth.attributes[a])
        assert back.fingerprint() == small_synth.fingerprint()

    def test_round_trip_keeps_shift(self, tmp_path):
        p = _write(tmp_path / "d.csv", "sample_id,a,label\nx1,-2,A\nx2,5,B\n")
        ds = load_csv(p)
        back = load_csv(save_csv(ds, tmp_path / "out.csv"))
        assert back.feature_shift.tolist() == [2.0]
        np.testing.assert_array_equal(back.features, ds.features)


class TestEncodeSnv:
    def test_default_table(self):
        assert encode_snv("deleterious", "high") == 1.0
        assert encode_snv("tolerated", "high") == 0.5
        assert encode_snv("tolerated", "modifier") == pytest.approx(0.05)

    def test_unknown_category(self):
        with pytest.raises(VocabularyError):
            encode_snv("benign", "high")

    def test_aggregation_sums_per_gene(self):
        recs = [("p1", "TP53", "deleterious", "high"), ("p1", "TP53", "tolerated", "low"), ("p2", "KRAS", "tolerated", "high")]
        X = aggregate_snv(recs, ["p1", "p2"], ["KRAS", "TP53"])
        assert X[0, 1] == pytest.approx(1.0 + 0.5 * 0.33)
        assert X[1, 0] == 0.5
        assert X[0, 0] == 0.0


class TestSynthesize:
    def test_deterministic(self):
        cfg = SynthConfig(n_samples=1000, n_features=200, n_classes=11, seed=7)
        a, b = synthesize(cfg), synthesize(cfg)
        assert a.features.tobytes() == b.features.tobytes()
        assert a.labels.tobytes() == b.labels.tobytes()
        assert a.fingerprint() == b.fingerprint()

    def test_realised_share(self):
        cfg = SynthConfig(n_samples=1000, n_features=20, attributes=(AttributeSpec("gender", ("male", "female"), (0.8, 0.2)),))
        assert 0.799 <= sample_percentage(synthesize(cfg), "gender", "male") <= 0.801

    def test_classes_learnable(self, small_synth):
        pair = split(small_synth, 0.6, 0)
        assert accuracy(train(pair.train), pair.test) > 1.0 / small_synth.k + 0.1

    def test_non_negative(self, small_synth):
        assert small_synth.features.min(axis=0).min() >= 0

    def test_infeasible_share(self):
        cfg = SynthConfig(n_samples=10, attributes=(AttributeSpec("gender", ("male", "female"), (0.99, 0.01)),))
        with pytest.raises(ConfigError):
            synthesize(cfg)

    def test_exclusive_classes(self):
        cfg = SynthConfig(n_samples=800, n_features=10, n_classes=6, exclusive_classes=1, seed=3)
        ds = synthesize(cfg)
        g = ds.attributes["gender"]
        # class 0 belongs to group 0 only, class 1 to group 1 only
        assert not np.any((ds.labels == 0) & (g != 0))
        assert not np.any((ds.labels == 1) & (g != 1))

    def test_from_dict_rejects_unknown(self):
        with pytest.raises(ConfigError):
            SynthConfig.from_dict({"n_samples": 10, "colour": "red"})


class TestSplit:
    def test_sizes(self):
        ds = _gender(5, 5)
        pair = split(ds, 0.6, 0)
        assert (pair.train.n, pair.test.n) == (6, 4)

    def test_deterministic_and_disjoint(self, small_synth):
        a, b = split(small_synth, 0.6, 3), split(small_synth, 0.6, 3)
        assert a.train.sample_ids == b.train.sample_ids
        assert not set(a.train.sample_ids) & set(a.test.sample_ids)
        assert set(a.train.sample_ids) | set(a.test.sample_ids) == set(small_synth.sample_ids)

    def test_fraction_one(self):
        with pytest.raises(SizeError):
            split(_gender(5, 5), 1.0)

    def test_too_small(self):
        with pytest.raises(SizeError):
            split(_gender(1, 0), 0.5)


class TestSamplePercentage:
    def test_basic(self):
        assert sample_percentage(_gender(8, 2), "gender", "male") == 0.8

    def test_empty_and_full(self):
        ds = _gender(10, 0)
        ds = make_dataset(ds.features, ds.labels, 2, {"gender": np.zeros(10, int)}, {"gender": ("male", "female")})
        assert sample_percentage(ds, "gender", "female") == 0.0
        assert sample_percentage(ds, "gender", "male") == 1.0

    def test_unknown(self):
        with pytest.raises(UnknownNameError):
            sample_percentage(_gender(2, 2), "race", "x")
        with pytest.raises(UnknownNameError):
            sample_percentage(_gender(2, 2), "gender", "other")


class TestBiasedSubset:
    def test_fifty_fifty_to_eighty(self):
        out = make_biased_subset(_gender(50, 50), "gender", "male", 0.8, seed=1)
        # 37 removals give 50/63 = 0.794, 38 give 50/62 = 0.806; 0.794 is closer
        assert out.n == 63
        assert sample_percentage(out, "gender", "male") == pytest.approx(50 / 63)

    def test_removal_count_oracle(self):
        best = min(range(51), key=lambda r: (abs(50 / (100 - r) - 0.8), r))
        assert removal_count(100, 50, 0.8, 50) == best

    def test_unchanged_at_current_share(self):
        ds = _gender(50, 50)
        assert make_biased_subset(ds, "gender", "male", 0.5) is ds

    def test_pool_exhausted(self):
        # 50 group rows, 5 removable and 6 protected: s=50/55 needs 6 removals
        rng = np.random.default_rng(0)
        g = np.array([0] * 50 + [1] * 5 + [2] * 6)
        ds = make_dataset(rng.random((61, 2)), rng.integers(0, 2, 61), 2, {"gender": g},
                          {"gender": ("male", "female", "unreported")})
        with pytest.raises(InfeasibleError):
            make_biased_subset(ds, "gender", "male", 50 / 55, removable_groups=["female"])
        out = make_biased_subset(ds, "gender", "male", 50 / 56, removable_groups=["female"])
        assert out.n == 56

    def test_below_current_share(self):
        with pytest.raises(InfeasibleError):
            make_biased_subset(_gender(60, 40), "gender", "male", 0.5)

    def test_group_rows_kept(self):
        ds = _gender(30, 30)
        out = make_biased_subset(ds, "gender", "male", 0.7, seed=4)
        males = {s for s, g in zip(ds.sample_ids, ds.attributes["gender"]) if g == 0}
        assert males <= set(out.sample_ids)

    def test_nested(self):
        ds = _gender(40, 60, seed=2)
        a = make_biased_subset(ds, "gender", "male", 0.55, seed=9)
        b = make_biased_subset(ds, "gender", "male", 0.75, seed=9)
        assert set(b.sample_ids) <= set(a.sample_ids)

    @settings(max_examples=60, deadline=None)
    @given(
        st.integers(5, 60), st.integers(5, 60),
        st.floats(0.0, 0.45), st.floats(0.0, 0.45), st.integers(0, 100),
    )
    def test_monotone_in_target(self, n_male, n_female, d1, d2, seed):
        ds = _gender(n_male, n_female)
        base = n_male / (n_male + n_female)
        s1, s2 = sorted([base + d1 * (1 - base), base + d2 * (1 - base)])
        if s2 >= n_male / (n_male + 1):
            return
        a = make_biased_subset(ds, "gender", "male", s1, seed)
        b = make_biased_subset(ds, "gender", "male", s2, seed)
        assert b.n <= a.n
        assert abs(sample_percentage(b, "gender", "male") - s2) <= n_male / (b.n - 1) - n_male / b.n + 1e-12

    def test_trim_group(self):
        out = trim_group(_gender(60, 40), "gender", "male", 0.5, seed=0)
        assert sample_percentage(out, "gender", "male") == 0.5
        assert out.n == 80
        ds = _gender(40, 60)
        assert trim_group(ds, "gender", "male", 0.5) is ds


class TestDatasetInvariants:
    def test_negative_rejected(self):
        with pytest.raises(ParseError):
            make_dataset([[-1.0]], [0], k=2)

    def test_label_out_of_range(self):
        with pytest.raises(VocabularyError):
            make_dataset([[1.0], [2.0]], [0, 5], k=2)

    def test_attribute_length(self):
        with pytest.raises(SizeError):
            make_dataset([[1.0], [2.0]], [0, 1], attrs={"g": np.array([0])}, groups={"g": ("a", "b")})

    def test_concat_schema_mismatch(self):
        a = make_dataset([[1.0]], [0], k=2)
        b = make_dataset([[1.0, 2.0]], [0], k=2)
        with pytest.raises(VocabularyError):
            a.concat(b)

    def test_immutable(self, small_synth):
        with pytest.raises(ValueError):
            small_synth.features[0, 0] = 5.0

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.lists(st.floats(-50, 50), min_size=3, max_size=3), min_size=2, max_size=12))
    def test_ingestion_is_non_negative(self, tmp_path_factory, rows):
        p = tmp_path_factory.mktemp("ing") / "d.csv"
        lines = ["sample_id,a,b,c,label"] + [f"r{i},{r[0]!r},{r[1]!r},{r[2]!r},{'AB'[i % 2]}" for i, r in enumerate(rows)]
        p.write_text("\n".join(lines) + "\n", encoding="utf-8")
        ds = load_csv(p)
        assert ds.features.min() >= 0
        np.testing.assert_allclose(ds.features - ds.feature_shift, np.array(rows), atol=1e-9)
