import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from biasprobe.errors import BoundsError, ConfigError, ShapeError
from biasprobe.model import TrainConfig
from biasprobe.trigger import (
    ExclusionList,
    SearchConfig,
    Trigger,
    apply_trigger,
    candidate_triggers,
    clean_baseline,
    evaluate_candidates,
    evaluate_trigger,
    filter_exclusion,
    poison_with_trigger,
    search_triggers,
    write_search_report,
)

from conftest import make_dataset

FAST = TrainConfig(epochs=200)


def planted(seed=0, n=300):
    """Three learnable classes; feature 0 has a low bulk and one rare high value."""
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 3
    X = rng.random((n, 4)) + np.eye(3, 4)[y] * 2.0
    f0 = rng.random(n) * 2.0
    f0[0] = 20.0
    X = np.column_stack([f0, X])
    ds = make_dataset(X, y, k=3)
    idx = np.random.default_rng(seed + 1).permutation(n)
    return ds.take(np.sort(idx[: int(0.6 * n)])), ds.take(np.sort(idx[int(0.6 * n):]))


class TestTriggerType:
    def test_apply(self):
        assert apply_trigger([1, 2, 3], Trigger((1,), 9)).tolist() == [1, 9, 3]

    def test_empty_invalid(self):
        with pytest.raises(ConfigError):
            Trigger((), 1.0)

    def test_duplicates_and_negative_value(self):
        with pytest.raises(ConfigError):
            Trigger((1, 1), 1.0)
        with pytest.raises(ConfigError):
            Trigger((1,), -1.0)

    def test_out_of_range(self):
        with pytest.raises(BoundsError):
            apply_trigger([1, 2, 3], Trigger((3,), 1.0))

    def test_bad_shape(self):
        with pytest.raises(ShapeError):
            apply_trigger(np.zeros((2, 2, 2)), Trigger((0,), 1.0))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0, 100), min_size=1, max_size=10), st.data())
    def test_idempotent_and_local(self, row, data):
        f = data.draw(st.lists(st.integers(0, len(row) - 1), min_size=1, max_size=len(row), unique=True))
        t = Trigger(tuple(f), data.draw(st.floats(0, 50)))
        once = apply_trigger(row, t)
        assert once.tolist() == apply_trigger(once, t).tolist()
        for j, v in enumerate(row):
            assert once[j] == (t.value if j in f else v)
        assert row == list(row)  # input untouched


class TestExclusion:
    def test_gene_names(self):
        ex = ExclusionList({"KIAA1549"})
        assert filter_exclusion(["PLAC9", "KIAA1549", "LDHC"], ex) == ["PLAC9", "LDHC"]

    def test_empty_is_identity(self):
        assert filter_exclusion(["a", "b"], ExclusionList()) == ["a", "b"]

    def test_all_excluded(self):
        assert filter_exclusion(["a", "b"], ExclusionList({"a", "b"})) == []

    def test_indices_resolved_through_dataset(self):
        ds = make_dataset(np.ones((2, 3)), [0, 1])
        assert filter_exclusion([2, 0, 1], ExclusionList({"f0"}), ds) == [2, 1]

    def test_file_format(self, tmp_path, caplog):
        p = tmp_path / "ex.txt"
        p.write_text("# known drivers\nf1\n\n  f2  # trailing comment\nUNKNOWN\n", encoding="utf-8")
        ex = ExclusionList.from_file(p)
        assert ex.names == {"f1", "f2", "UNKNOWN"}
        ds = make_dataset(np.ones((2, 3)), [0, 1])
        assert ex.resolve(ds) == [1, 2]
        assert "UNKNOWN" in caplog.text


class TestPoisonWithTrigger:
    def test_counts_and_labels(self):
        tr, _ = planted()
        out = poison_with_trigger(tr, Trigger((0,), 15.0), 2, 10.0, seed=0)
        pool = int(np.sum(tr.labels != 2))
        added = out.n - tr.n
        assert added == int(10.0 / 100 * pool)
        assert np.all(out.labels[tr.n:] == 2)
        assert np.all(out.features[tr.n:, 0] == 15.0)
        np.testing.assert_array_equal(out.features[: tr.n], tr.features)


class TestSearch:
    @pytest.fixture(scope="class")
    @staticmethod
    def data():
        return planted()

    @pytest.fixture(scope="class")
    @staticmethod
    def cfg():
        return SearchConfig(max_features=5, candidates_per_feature=3, train=FAST)

    def test_planted_trigger_found(self, data, cfg):
        tr, te = data
        res = search_triggers(tr, te, 2, cfg)
        assert len(res) >= 1
        assert all(r.attack_accuracy == 1.0 for r in res)

    def test_relaxed_floor_superset(self, data, cfg):
        tr, te = data
        strict = search_triggers(tr, te, 2, cfg)
        loose = search_triggers(tr, te, 2, SearchConfig(**{**cfg.__dict__, "attack_floor": 0.98}))
        assert len(loose) >= len(strict)
        assert {(r.trigger.features, r.trigger.value) for r in strict} <= {
            (r.trigger.features, r.trigger.value) for r in loose
        }

    def test_results_reproduce(self, data, cfg):
        tr, te = data
        base = clean_baseline(tr, te, cfg.train)
        for r in search_triggers(tr, te, 2, cfg)[:3]:
            att, cl = evaluate_trigger(tr, te, r.trigger, 2, cfg.poison_percent, cfg.seed, cfg.train)
            assert att >= cfg.attack_floor and base - cl <= cfg.clean_drop_ceiling
            assert (att, cl) == (r.attack_accuracy, r.clean_accuracy)

    def test_exclusion_respected(self, data, cfg):
        tr, te = data
        res = search_triggers(tr, te, 2, cfg, ExclusionList({"f0"}))
        assert all(0 not in r.trigger.features for r in res)

    def test_values_within_range(self, data, cfg):
        tr, _ = data
        for t in candidate_triggers(tr, cfg):
            col = tr.features[:, t.features[0]]
            assert col.min() <= t.value <= col.max()

    def test_sorted(self, data, cfg):
        tr, te = data
        scored = evaluate_candidates(tr, te, 2, cfg)
        keys = [(-r.attack_accuracy, -r.clean_accuracy) for r in scored]
        assert keys == sorted(keys)

    def test_parallel_matches_serial(self, data):
        tr, te = data
        cfg = SearchConfig(max_features=2, candidates_per_feature=1, train=TrainConfig(epochs=50))
        a = evaluate_candidates(tr, te, 2, cfg, jobs=1)
        b = evaluate_candidates(tr, te, 2, cfg, jobs=2)
        assert [(r.trigger, r.attack_accuracy, r.clean_accuracy) for r in a] == [
            (r.trigger, r.attack_accuracy, r.clean_accuracy) for r in b
        ]

    def test_early_stop(self, data, cfg):
        tr, te = data
        res = search_triggers(tr, te, 2, SearchConfig(**{**cfg.__dict__, "max_triggers": 1}))
        assert len(res) == 1

    def test_bad_target(self, data, cfg):
        tr, te = data
        with pytest.raises(BoundsError):
            search_triggers(tr, te, 7, cfg)

    def test_report_states_empty(self, tmp_path, data):
        tr, _ = data
        rep = write_search_report(tmp_path / "r.json", [], 0.9, tr, SearchConfig())
        raw = json.loads((tmp_path / "r.json").read_text())
        assert raw["n_triggers"] == 0 and "no trigger" in raw["note"]
        assert rep["schema_version"] == 1

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            SearchConfig(attack_floor=0)
        with pytest.raises(ConfigError):
            SearchConfig(clean_drop_ceiling=-0.1)
        with pytest.raises(ConfigError):
            SearchConfig.from_dict({"floor": 1.0})
