import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from biasprobe.data import ATTR, ATTR_BD, CLEAN, split
from biasprobe.errors import (
    AssignmentError,
    CapacityError,
    ConfigError,
    PoolExhaustedError,
    UnknownNameError,
)
from biasprobe.model import TrainConfig, stamp, train
from biasprobe.poison import (
    AttributeTrigger,
    BackdoorPlan,
    attribute_pool_size,
    calibrate_attribute_poisoning,
    choose_encoded_labels,
    choose_secondary_target,
    design_attribute_trigger,
    group_label_counts,
    inject_secondary,
    poison_attribute,
    poison_count,
    train_independent_attribute_model,
    validate_attribute_learning,
)
from biasprobe.trigger import Trigger

from conftest import make_dataset

FAST = TrainConfig(epochs=200)


def counts_dataset(table):
    """Dataset whose (group, label) counts equal ``table`` (groups x classes)."""
    table = np.asarray(table)
    g, y = [], []
    for gi, row in enumerate(table):
        for c, n in enumerate(row):
            g += [gi] * int(n)
            y += [c] * int(n)
    X = np.arange(len(y) * 2, dtype=float).reshape(-1, 2)
    return make_dataset(X, y, k=table.shape[1], attrs={"sex": np.array(g)},
                        groups={"sex": tuple(f"g{i}" for i in range(table.shape[0]))})


class TestPoisonCount:
    @pytest.mark.parametrize(
        "p,x,expected",
        [(5, 100, 5), (0.5, 100, 0), (2.5, 99, 2), (100, 37, 37), (0, 50, 0), (1, 0, 0), (29, 100, 28)],
    )
    def test_examples(self, p, x, expected):
        # 29/100*100 is 28.999999999999996 in binary floating point
        assert poison_count(p, x) == expected

    def test_negative(self):
        with pytest.raises(ConfigError):
            poison_count(-1, 10)
        with pytest.raises(ConfigError):
            poison_count(1, -10)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0, 100), st.floats(0, 100), st.integers(0, 10_000))
    def test_monotone_in_p(self, p1, p2, x):
        lo, hi = sorted((p1, p2))
        assert poison_count(lo, x) <= poison_count(hi, x) <= x

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0, 100), st.integers(0, 10_000), st.integers(0, 10_000))
    def test_monotone_in_pool(self, p, x1, x2):
        lo, hi = sorted((x1, x2))
        assert 0 <= poison_count(p, lo) <= poison_count(p, hi)


class TestEncoding:
    def test_uncontested(self):
        ds = counts_dataset([[10, 5, 0], [8, 9, 0]])
        assert choose_encoded_labels(ds, "sex") == {"g0": 0, "g1": 1}

    def test_contested_label_goes_to_larger_count(self):
        ds = counts_dataset([[10, 2, 0], [9, 1, 0]])
        assert choose_encoded_labels(ds, "sex") == {"g0": 0, "g1": 1}
        ds = counts_dataset([[9, 1, 0], [10, 2, 0]])
        assert choose_encoded_labels(ds, "sex") == {"g0": 1, "g1": 0}

    def test_group_label_counts(self):
        table = [[3, 0, 1], [0, 2, 4]]
        np.testing.assert_array_equal(group_label_counts(counts_dataset(table), "sex"), table)

    def test_capacity(self):
        with pytest.raises(CapacityError):
            choose_encoded_labels(counts_dataset([[1, 0, 0], [0, 1, 0], [0, 0, 1]]), "sex")

    def test_empty_group(self):
        ds = counts_dataset([[2, 1, 0], [0, 0, 0]])
        with pytest.raises(AssignmentError):
            choose_encoded_labels(ds, "sex")

    def test_unknown_attribute(self):
        with pytest.raises(UnknownNameError):
            choose_encoded_labels(counts_dataset([[1, 1, 1]]), "age")

    def test_distinct_labels_property(self, small_synth):
        enc = choose_encoded_labels(small_synth, "gender")
        assert len(set(enc.values())) == len(enc) == 2


class TestSecondaryTarget:
    def test_majority_skips_encoded(self):
        ds = counts_dataset([[1, 9, 5, 3], [1, 1, 1, 1]])
        assert choose_secondary_target(ds, {"g0": 1, "g1": 0}) == 2

    def test_random_is_seeded_and_free(self):
        ds = counts_dataset([[1, 9, 5, 3], [1, 1, 1, 1]])
        picks = {choose_secondary_target(ds, {"g0": 1}, "random", seed) for seed in range(20)}
        assert picks <= {0, 2, 3}
        assert choose_secondary_target(ds, {"g0": 1}, "random", 4) == choose_secondary_target(
            ds, {"g0": 1}, "random", 4
        )

    def test_no_free_class(self):
        with pytest.raises(CapacityError):
            choose_secondary_target(counts_dataset([[1, 1]]), {"g0": 0, "g1": 1})

    def test_bad_mode(self):
        with pytest.raises(ConfigError):
            choose_secondary_target(counts_dataset([[1, 1, 1]]), {"g0": 0}, "best")


@pytest.fixture(scope="module")
def design(small_synth):
    return design_attribute_trigger(small_synth, "gender", m=10)


class TestDesign:
    def test_shape(self, small_synth, design):
        assert len(design.features) == 10 == len(set(design.features))
        pooled = small_synth.features[:, list(design.features)]
        assert pooled.min() <= design.value <= pooled.max()
        assert design.encoding == choose_encoded_labels(small_synth, "gender")

    def test_exclude(self, small_synth, design):
        banned = design.features[:3]
        other = design_attribute_trigger(small_synth, "gender", m=10, exclude=banned)
        assert not set(banned) & set(other.features)

    def test_score_against_attribute(self, small_synth):
        at = design_attribute_trigger(small_synth, "gender", m=5, score_against="attribute")
        assert len(at.features) == 5

    def test_too_many_features(self, small_synth):
        with pytest.raises(ConfigError):
            design_attribute_trigger(small_synth, "gender", m=31)
        with pytest.raises(ConfigError):
            design_attribute_trigger(small_synth, "gender", score_against="tumour")

    def test_trigger_validation(self):
        with pytest.raises(ConfigError):
            AttributeTrigger((), 1.0, "a", {"x": 0})
        with pytest.raises(ConfigError):
            AttributeTrigger((1,), 1.0, "a", {"x": 0, "y": 0})


class TestPoisonAttribute:
    def test_counts_labels_and_stamp(self, small_synth, design):
        out = poison_attribute(small_synth, design, 0.2, seed=3)
        n = small_synth.n
        gidx = small_synth.attributes["gender"]
        names = small_synth.group_names["gender"]
        expected = sum(int(np.floor(0.2 * np.sum(gidx == g))) for g in range(len(names)))
        assert out.n - n == expected == attribute_pool_size(small_synth, "gender", 0.2)
        new = slice(n, None)
        assert np.all(out.poison_tags[new] == ATTR) and np.all(out.poison_tags[:n] == CLEAN)
        assert np.all(out.features[new][:, list(design.features)] == design.value)
        lut = np.array([design.encoding[g] for g in names])
        np.testing.assert_array_equal(out.labels[new], lut[out.attributes["gender"][new]])
        np.testing.assert_array_equal(out.features[:n], small_synth.features)

    def test_untouched_columns_copied(self, small_synth, design):
        out = poison_attribute(small_synth, design, 0.2, seed=3)
        rest = [j for j in range(small_synth.d) if j not in design.features]
        idx = [small_synth.sample_ids.index(s.split("~")[0]) for s in out.sample_ids[small_synth.n:]]
        np.testing.assert_array_equal(out.features[small_synth.n:][:, rest], small_synth.features[idx][:, rest])

    def test_deterministic(self, small_synth, design):
        a = poison_attribute(small_synth, design, 0.3, seed=9)
        b = poison_attribute(small_synth, design, 0.3, seed=9)
        assert a.fingerprint() == b.fingerprint()

    def test_bad_fraction(self, small_synth, design):
        with pytest.raises(ConfigError):
            poison_attribute(small_synth, design, 0.0, seed=0)


class TestSecondary:
    def plan(self, ds, at):
        target = choose_secondary_target(ds, at.encoding)
        feat = next(j for j in range(ds.d) if j not in at.features)
        return BackdoorPlan(at, Trigger((feat,), 50.0), target)

    def test_inject(self, small_synth, design):
        plan = self.plan(small_synth, design)
        pois = poison_attribute(small_synth, design, 0.2, seed=0)
        out = inject_secondary(pois, plan, 7, seed=1)
        new = slice(pois.n, None)
        assert out.n - pois.n == 7
        assert np.all(out.poison_tags[new] == ATTR_BD)
        assert np.all(out.labels[new] == plan.target_label)
        assert np.all(out.features[new][:, list(design.features)] == design.value)
        assert np.all(out.features[new][:, plan.secondary_trigger.features[0]] == 50.0)
        assert inject_secondary(pois, plan, 0, seed=1) is pois

    def test_pool_exhausted(self, small_synth, design):
        plan = self.plan(small_synth, design)
        pois = poison_attribute(small_synth, design, 0.2, seed=0)
        pool = pois.n - small_synth.n
        with pytest.raises(PoolExhaustedError):
            inject_secondary(pois, plan, pool + 1, seed=1)

    def test_plan_validation(self, small_synth, design):
        enc_label = next(iter(design.encoding.values()))
        free = next(j for j in range(small_synth.d) if j not in design.features)
        with pytest.raises(ConfigError):
            BackdoorPlan(design, Trigger((free,), 1.0), enc_label)
        with pytest.raises(ConfigError):
            BackdoorPlan(design, Trigger((design.features[0],), 1.0), 4 if enc_label != 4 else 2)
        with pytest.raises(ConfigError):
            BackdoorPlan(design, Trigger((free, free + 1), 1.0), 4 if enc_label != 4 else 2)

    def test_plan_round_trip(self, tmp_path, small_synth, design):
        plan = self.plan(small_synth, design)
        plan.save(tmp_path / "plan.json")
        assert BackdoorPlan.load(tmp_path / "plan.json") == plan


class TestAttributeLearning:
    @pytest.fixture(scope="class")
    @staticmethod
    def parts(small_synth):
        return split(small_synth, 0.6, 0)

    def test_independent_model_beats_chance(self, parts):
        _, acc = train_independent_attribute_model(parts.train, "gender", FAST, parts.test)
        assert acc > 0.6

    def test_triggered_rows_map_to_encoded_labels(self, parts):
        at = design_attribute_trigger(parts.train, "gender")
        model = train(poison_attribute(parts.train, at, 0.3, seed=0), FAST)
        pred = model.predict_many(stamp(parts.test.features, at))
        assert set(pred.tolist()) <= set(at.encoding.values())
        attr_acc, tumor_acc = validate_attribute_learning(model, parts.test, at)
        names = parts.test.group_names["gender"]
        truth = np.array([at.encoding[names[g]] for g in parts.test.attributes["gender"]])
        assert attr_acc == np.mean(pred == truth)
        assert tumor_acc == np.mean(model.predict_many(parts.test.features) == parts.test.labels)

    def test_calibration_passes_immediately_when_lenient(self, parts):
        at = design_attribute_trigger(parts.train, "gender")
        cal = calibrate_attribute_poisoning(parts.train, parts.test, at, FAST, tolerance=1.0, ceiling=1.0)
        assert cal.passed and cal.fraction == 0.2 and len(cal.history) == 1

    def test_calibration_reports_best_failure(self, parts):
        at = design_attribute_trigger(parts.train, "gender")
        cal = calibrate_attribute_poisoning(
            parts.train, parts.test, at, FAST, stop=0.4, independent_accuracy=2.0, clean_accuracy=0.0
        )
        assert not cal.passed
        assert [round(h[0], 6) for h in cal.history] == [0.2, 0.3, 0.4]
        assert cal.attribute_accuracy == max(h[1] for h in cal.history)

    def test_calibration_empty_range(self, parts):
        at = design_attribute_trigger(parts.train, "gender")
        with pytest.raises(ConfigError):
            calibrate_attribute_poisoning(parts.train, parts.test, at, FAST, start=0.6, stop=0.5,
                                          independent_accuracy=0.5, clean_accuracy=0.5)
