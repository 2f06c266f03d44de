"""Single-feature trigger search driven by chi-squared ranking and density minima."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import BoundsError, ConfigError, DegenerateDistributionError, ShapeError
from .model import TrainConfig, accuracy, attack_accuracy, train
from .stats import chi2_scores, fit_kde, lowest_density_candidates

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Trigger:
    """Write ``value`` into every feature in ``features``."""

    features: tuple
    value: float

    def __post_init__(self):
        feats = tuple(int(f) for f in self.features)
        if not feats:
            raise ConfigError("a trigger needs at least one feature")
        if len(set(feats)) != len(feats):
            raise ConfigError("trigger features must be distinct")
        if min(feats) < 0:
            raise BoundsError("trigger feature index is negative")
        if not float(self.value) >= 0:
            raise ConfigError("trigger value must be non-negative")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "value", float(self.value))

    def to_dict(self):
        return {"features": list(self.features), "value": self.value}


def _check_bounds(trigger, d):
    if max(trigger.features) >= d:
        raise BoundsError(f"trigger feature {max(trigger.features)} out of range for d={d}")


def apply_trigger(feature_row, trigger):
    """Copy of ``feature_row`` (1-d row or 2-d matrix) with the trigger stamped in."""
    out = np.array(feature_row, dtype=np.float64, copy=True)
    if out.ndim not in (1, 2):
        raise ShapeError("expected a feature row or matrix")
    _check_bounds(trigger, out.shape[-1])
    out[..., list(trigger.features)] = trigger.value
    return out


@dataclass(frozen=True)
class ExclusionList:
    names: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "names", frozenset(self.names))

    def __contains__(self, name):
        return name in self.names

    def __len__(self):
        return len(self.names)

    @classmethod
    def from_file(cls, path):
        names = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                names.append(line)
        return cls(frozenset(names))

    def resolve(self, dataset):
        """Indices of listed features present in ``dataset``; warns on the rest."""
        known = {name: j for j, name in enumerate(dataset.feature_names)}
        missing = sorted(self.names - known.keys())
        if missing:
            log.warning("exclusion list names not in dataset, ignored: %s", ", ".join(missing))
        return sorted(known[n] for n in self.names if n in known)


def filter_exclusion(candidate_features, exclusion, dataset=None):
    """Drop excluded features, keeping order. Accepts names or column indices."""
    if exclusion is None or len(exclusion) == 0:
        return list(candidate_features)
    out = []
    for f in candidate_features:
        name = f if isinstance(f, str) else dataset.feature_names[int(f)]
        if name not in exclusion:
            out.append(f)
    return out


@dataclass(frozen=True)
class SearchConfig:
    attack_floor: float = 1.0
    clean_drop_ceiling: float = 0.01
    max_features: int = 10
    candidates_per_feature: int = 10
    poison_percent: float = 5.0
    max_triggers: int | None = None
    grid_points: int = 512
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if not 0 < self.attack_floor <= 1:
            raise ConfigError("attack_floor must lie in (0, 1]")
        if self.clean_drop_ceiling < 0:
            raise ConfigError("clean_drop_ceiling must be >= 0")
        if self.max_features < 1 or self.candidates_per_feature < 0:
            raise ConfigError("max_features must be >= 1 and candidates_per_feature >= 0")

    @classmethod
    def from_dict(cls, raw):
        raw = dict(raw)
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown search config keys: {sorted(unknown)}")
        if "train" in raw and not isinstance(raw["train"], TrainConfig):
            raw["train"] = TrainConfig.from_dict(raw["train"])
        return cls(**raw)


@dataclass(frozen=True)
class TriggerResult:
    trigger: Trigger
    attack_accuracy: float
    clean_accuracy: float

    def to_dict(self, feature_names=None):
        out = {
            "features": list(self.trigger.features),
            "value": self.trigger.value,
            "attack_acc": self.attack_accuracy,
            "clean_acc": self.clean_accuracy,
        }
        if feature_names is not None:
            out["feature_names"] = [feature_names[j] for j in self.trigger.features]
        return out


def poison_with_trigger(train_set, trigger, target_label, percent, seed):
    """Append triggered, relabelled copies of randomly chosen non-target rows."""
    from .poison import poison_count

    pool = np.flatnonzero(train_set.labels != target_label)
    x_p = poison_count(percent, len(pool))
    if x_p == 0:
        return train_set
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(pool, size=x_p, replace=False))
    X = apply_trigger(train_set.features[chosen], trigger)
    # search-time poisoning is never exported, so rows keep the clean tag
    return train_set.append_copies(chosen, X, np.full(x_p, target_label), tag=0, suffix="bd")


def evaluate_trigger(train_set, test_set, trigger, target_label, percent, seed, train_config):
    """Train on the poisoned set; return ``(attack_accuracy, clean_accuracy)``."""
    poisoned = poison_with_trigger(train_set, trigger, target_label, percent, seed)
    model = train(poisoned, train_config)
    return attack_accuracy(model, test_set, trigger, target_label), accuracy(model, test_set)


def _evaluate_job(args):
    return evaluate_trigger(*args)


def candidate_triggers(train_set, config, exclusion=None):
    """Ranked ``(feature, value)`` candidates: features by chi-squared, values by density."""
    ranking = [int(j) for j in chi2_scores(train_set).ranking]
    ranking = filter_exclusion(ranking, exclusion, train_set)[: config.max_features]
    out = []
    for f in ranking:
        try:
            kde = fit_kde(train_set.features[:, f])
        except DegenerateDistributionError:
            continue
        for v in lowest_density_candidates(kde, config.candidates_per_feature, config.grid_points):
            out.append(Trigger((f,), v))
    return out


def _passes(result, config, baseline):
    return (
        result.attack_accuracy >= config.attack_floor
        and baseline - result.clean_accuracy <= config.clean_drop_ceiling
    )


def _sort_results(results):
    return sorted(
        results,
        key=lambda r: (-r.attack_accuracy, -r.clean_accuracy, r.trigger.features, r.trigger.value),
    )


def evaluate_candidates(train_set, test_set, target_label, config=None, exclusion=None, jobs=1,
                        baseline=None):
    """Score every candidate trigger, keeping those that fail the constraints too.

    Returns results sorted like ``search_triggers``. With ``max_triggers``
    set, evaluation stops once that many candidates satisfy the
    constraints (``baseline`` is then needed, and trained if missing).
    """
    cfg = config or SearchConfig()
    if not 0 <= target_label < train_set.k:
        raise BoundsError(f"target label {target_label} out of range")
    cands = candidate_triggers(train_set, cfg, exclusion)
    args = [(train_set, test_set, t, target_label, cfg.poison_percent, cfg.seed, cfg.train) for t in cands]
    if jobs > 1 and cfg.max_triggers is None:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            scored = list(ex.map(_evaluate_job, args))
    else:
        if cfg.max_triggers is not None and baseline is None:
            baseline = clean_baseline(train_set, test_set, cfg.train)
        scored, ok = [], 0
        for t, a in zip(cands, args):
            scored.append(_evaluate_job(a))
            if cfg.max_triggers is not None:
                ok += _passes(TriggerResult(t, *scored[-1]), cfg, baseline)
                if ok >= cfg.max_triggers:
                    break
    return _sort_results(TriggerResult(t, att, cl) for t, (att, cl) in zip(cands, scored))


def search_triggers(train_set, test_set, target_label, config=None, exclusion=None, jobs=1, baseline=None):
    """Scan candidate single-feature triggers under the attack/clean constraints.

    Every candidate is evaluated by poisoning ``config.poison_percent`` of the
    non-target training rows with the same seeded selection, training a fresh
    model, and comparing against a clean baseline trained once (or the
    ``baseline`` accuracy passed in). Results are sorted by attack accuracy,
    then clean accuracy (both descending).
    """
    cfg = config or SearchConfig()
    if baseline is None:
        baseline = clean_baseline(train_set, test_set, cfg.train)
    scored = evaluate_candidates(train_set, test_set, target_label, cfg, exclusion, jobs, baseline)
    return [r for r in scored if _passes(r, cfg, baseline)]


def clean_baseline(train_set, test_set, train_config=None):
    return accuracy(train(train_set, train_config), test_set)


def write_search_report(path, results, baseline, dataset=None, config=None):
    names = dataset.feature_names if dataset is not None else None
    report = {
        "schema_version": 1,
        "clean_baseline": baseline,
        "n_triggers": len(results),
        "note": "no trigger satisfied the constraints" if not results else "",
        "config": asdict(config) if config is not None else None,
        "triggers": [r.to_dict(names) for r in results],
    }
    Path(path).write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    return report
