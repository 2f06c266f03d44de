"""Attribute-encoding double backdoor: attribute triggers plus a secondary trigger."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import ATTR, ATTR_BD, CLEAN
from .errors import (
    AssignmentError,
    CapacityError,
    ConfigError,
    EmptyPoisonError,
    PoolExhaustedError,
    SizeError,
    UnknownNameError,
)
from .model import TrainConfig, accuracy, stamp, train
from .stats import chi2_scores, fit_kde, lowest_density_candidates, rank_features
from .trigger import Trigger


def poison_count(p, x_K):
    """Number of poisoned samples for percentage ``p`` of a pool of ``x_K``."""
    if p < 0 or x_K < 0:
        raise ConfigError("poison percentage and pool size must be non-negative")
    return int(p / 100 * x_K)


def group_label_counts(dataset, attribute):
    if attribute not in dataset.attributes:
        raise UnknownNameError(f"unknown attribute {attribute!r}")
    G = len(dataset.group_names[attribute])
    counts = np.zeros((G, dataset.k), dtype=np.int64)
    np.add.at(counts, (dataset.attributes[attribute], dataset.labels), 1)
    return counts


def choose_encoded_labels(dataset, attribute):
    """Map each group to the class holding most of that group's samples.

    Contested labels go to the group with the larger count; the other group
    falls back to its next-best label. Returns ``{group_name: label_index}``.
    """
    counts = group_label_counts(dataset, attribute)
    groups = dataset.group_names[attribute]
    G, k = counts.shape
    if G > k - 1:
        raise CapacityError(
            f"{G} groups cannot be encoded with {k} classes (at most k-1 = {k - 1})"
        )
    empty = [groups[g] for g in range(G) if counts[g].sum() == 0]
    if empty:
        raise AssignmentError(f"groups without samples cannot be encoded: {empty}")
    pairs = sorted(
        ((int(counts[g, c]), g, c) for g in range(G) for c in range(k)),
        key=lambda t: (-t[0], t[1], t[2]),
    )
    enc, used = {}, set()
    for cnt, g, c in pairs:
        if g in enc or c in used:
            continue
        enc[g] = c
        used.add(c)
    if len(enc) != G:
        raise AssignmentError("no collision-free label assignment exists")
    return {groups[g]: enc[g] for g in range(G)}


@dataclass(frozen=True)
class AttributeTrigger:
    """Shared value ``value`` stamped into ``features``; ``encoding`` maps group to label."""

    features: tuple
    value: float
    attribute: str
    encoding: dict

    def __post_init__(self):
        feats = tuple(int(f) for f in self.features)
        if not feats:
            raise ConfigError("attribute trigger needs at least one feature")
        if len(set(feats)) != len(feats):
            raise ConfigError("attribute trigger features must be distinct")
        enc = {str(g): int(c) for g, c in dict(self.encoding).items()}
        if len(set(enc.values())) != len(enc):
            raise ConfigError("encoding must map distinct groups to distinct labels")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "value", float(self.value))
        object.__setattr__(self, "encoding", enc)

    def as_trigger(self):
        return Trigger(self.features, self.value)

    def to_dict(self):
        return {
            "features": list(self.features),
            "value": self.value,
            "attribute": self.attribute,
            "encoding": dict(self.encoding),
        }

    @classmethod
    def from_dict(cls, raw):
        return cls(raw["features"], raw["value"], raw["attribute"], raw["encoding"])


@dataclass(frozen=True)
class BackdoorPlan:
    attribute_trigger: AttributeTrigger
    secondary_trigger: Trigger
    target_label: int
    attr_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if len(self.secondary_trigger.features) != 1:
            raise ConfigError("the secondary trigger uses exactly one feature")
        if self.target_label in self.attribute_trigger.encoding.values():
            raise ConfigError("secondary target label must differ from every encoded label")
        if set(self.secondary_trigger.features) & set(self.attribute_trigger.features):
            raise ConfigError("secondary trigger feature overlaps the attribute trigger")
        if not 0 < self.attr_fraction <= 1:
            raise ConfigError("attr_fraction must lie in (0, 1]")

    def to_dict(self):
        return {
            "schema_version": 1,
            "attribute_trigger": self.attribute_trigger.to_dict(),
            "secondary_trigger": self.secondary_trigger.to_dict(),
            "target_label": int(self.target_label),
            "attr_fraction": self.attr_fraction,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, raw):
        st = raw["secondary_trigger"]
        return cls(
            attribute_trigger=AttributeTrigger.from_dict(raw["attribute_trigger"]),
            secondary_trigger=Trigger(st["features"], st["value"]),
            target_label=raw["target_label"],
            attr_fraction=raw.get("attr_fraction", 0.2),
            seed=raw.get("seed", 0),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def design_attribute_trigger(train_set, attribute, m=10, score_against="label", exclude=(), grid_points=512):
    """Top-``m`` chi-squared features sharing one low-density value.

    ``score_against`` is ``"label"`` (the class column) or ``"attribute"``.
    ``exclude`` lists feature indices that may not be used (for instance
    the secondary trigger's feature).
    """
    if attribute not in train_set.attributes:
        raise UnknownNameError(f"unknown attribute {attribute!r}")
    if score_against not in ("label", "attribute"):
        raise ConfigError("score_against must be 'label' or 'attribute'")
    report = chi2_scores(train_set, "label" if score_against == "label" else attribute)
    banned = set(int(j) for j in exclude)
    if m > train_set.d - len(banned):
        raise ConfigError(f"m={m} exceeds the usable feature count")
    feats = [j for j in rank_features(report, train_set.d) if j not in banned][:m]
    pooled = train_set.features[:, feats].ravel()
    value = lowest_density_candidates(fit_kde(pooled), 1, grid_points)[0]
    encoding = choose_encoded_labels(train_set, attribute)
    return AttributeTrigger(tuple(feats), value, attribute, encoding)


def poison_attribute(train_set, attrigger, fraction, seed):
    """Append attribute-triggered copies relabelled with their group's encoded label.

    ``floor(fraction * n_g)`` clean rows are drawn per group.
    """
    if not 0 < fraction <= 1:
        raise ConfigError("fraction must lie in (0, 1]")
    groups = train_set.group_names[attrigger.attribute]
    gidx = train_set.attributes[attrigger.attribute]
    clean = train_set.poison_tags == CLEAN
    rng = np.random.default_rng(seed)
    chosen, labels = [], []
    for g, name in enumerate(groups):
        members = np.flatnonzero((gidx == g) & clean)
        n_sel = int(np.floor(fraction * len(members)))
        if n_sel == 0:
            continue
        if name not in attrigger.encoding:
            raise UnknownNameError(f"group {name!r} has no encoded label")
        pick = np.sort(rng.choice(members, size=n_sel, replace=False))
        chosen.append(pick)
        labels.append(np.full(n_sel, attrigger.encoding[name]))
    if not chosen:
        raise EmptyPoisonError("fraction selects no sample from any group")
    chosen = np.concatenate(chosen)
    X = stamp(train_set.features[chosen], attrigger)
    return train_set.append_copies(chosen, X, np.concatenate(labels), tag=ATTR, suffix="attr")


def attribute_pool_size(train_set, attribute, fraction):
    """Size of the attribute-poisoned pool ``poison_attribute`` would append."""
    gidx = train_set.attributes[attribute][train_set.poison_tags == CLEAN]
    sizes = np.bincount(gidx, minlength=len(train_set.group_names[attribute]))
    return int(sum(int(np.floor(fraction * s)) for s in sizes))


def inject_secondary(poisoned_train, plan, x_p, seed):
    """Append ``x_p`` copies of attribute-triggered rows carrying the secondary trigger too."""
    pool = np.flatnonzero(poisoned_train.poison_tags == ATTR)
    if x_p > len(pool):
        raise PoolExhaustedError(f"x_p={x_p} exceeds the attribute-poisoned pool of {len(pool)}")
    if x_p == 0:
        return poisoned_train
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(pool, size=x_p, replace=False))
    X = stamp(poisoned_train.features[chosen], plan.secondary_trigger)
    return poisoned_train.append_copies(
        chosen, X, np.full(x_p, plan.target_label), tag=ATTR_BD, suffix="bd"
    )


def encoded_targets(test_set, attrigger):
    names = test_set.group_names[attrigger.attribute]
    lut = np.array([attrigger.encoding.get(g, -1) for g in names])
    return lut[test_set.attributes[attrigger.attribute]]


def validate_attribute_learning(model, test_set, attrigger):
    """``(attribute_accuracy, tumor_accuracy)`` of a model trained on attribute-poisoned data."""
    if test_set.n == 0:
        raise SizeError("empty test set")
    X = stamp(test_set.features, attrigger)
    attr_acc = float(np.mean(model.predict_many(X) == encoded_targets(test_set, attrigger)))
    return attr_acc, accuracy(model, test_set)


def attribute_dataset(dataset, attribute):
    """Copy of ``dataset`` whose class column is the attribute's group index."""
    if attribute not in dataset.attributes:
        raise UnknownNameError(f"unknown attribute {attribute!r}")
    groups = dataset.group_names[attribute]
    if len(groups) < 2:
        raise ConfigError("attribute needs at least 2 groups")
    return dataset.with_labels(dataset.attributes[attribute], groups)


def train_independent_attribute_model(train_set, attribute, config=None, test_set=None):
    """Logistic model predicting the attribute from genuine features.

    Returns ``(model, accuracy)``; accuracy is measured on ``test_set`` when
    given, otherwise on the training data.
    """
    model = train(attribute_dataset(train_set, attribute), config)
    held = test_set if test_set is not None else train_set
    return model, accuracy(model, attribute_dataset(held, attribute))


def choose_secondary_target(dataset, encoding, mode="majority", seed=0):
    """Class used as the secondary backdoor target (never an encoded label)."""
    used = set(encoding.values())
    free = [c for c in range(dataset.k) if c not in used]
    if not free:
        raise CapacityError("no class left for the secondary target")
    if mode == "random":
        return int(np.random.default_rng(seed).choice(free))
    if mode != "majority":
        raise ConfigError("mode must be 'majority' or 'random'")
    counts = np.bincount(dataset.labels, minlength=dataset.k)
    return int(max(free, key=lambda c: (counts[c], -c)))


@dataclass(frozen=True)
class AttributeCalibration:
    fraction: float
    attribute_accuracy: float
    tumor_accuracy: float
    independent_accuracy: float
    clean_accuracy: float
    passed: bool
    history: tuple


def calibrate_attribute_poisoning(
    train_set,
    test_set,
    attrigger,
    config=None,
    start=0.2,
    step=0.1,
    stop=0.5,
    tolerance=0.05,
    ceiling=0.01,
    slack=0.01,
    seed=0,
    independent_accuracy=None,
    clean_accuracy=None,
):
    """Raise the attribute-poison fraction until attribute learning matches the baseline.

    Passing means attribute accuracy >= independent accuracy - ``tolerance``
    and a tumour accuracy drop of at most ``ceiling + slack``. The search
    stops at ``stop``. When no fraction passes, the one with the smallest
    combined shortfall on the two conditions is returned, with
    ``passed=False``.
    """
    cfg = config or TrainConfig()
    if independent_accuracy is None:
        _, independent_accuracy = train_independent_attribute_model(
            train_set, attrigger.attribute, cfg, test_set
        )
    if clean_accuracy is None:
        clean_accuracy = accuracy(train(train_set, cfg), test_set)
    history = []
    fraction = start
    while fraction <= stop + 1e-9:
        poisoned = poison_attribute(train_set, attrigger, fraction, seed)
        attr_acc, tumor_acc = validate_attribute_learning(train(poisoned, cfg), test_set, attrigger)
        history.append((round(fraction, 10), attr_acc, tumor_acc))
        if _shortfall(attr_acc, tumor_acc, independent_accuracy, clean_accuracy, tolerance, ceiling + slack) == 0:
            break
        fraction += step
    if not history:
        raise ConfigError("calibration range is empty (start > stop)")

    def gap(h):
        return _shortfall(h[1], h[2], independent_accuracy, clean_accuracy, tolerance, ceiling + slack)

    best = min(history, key=lambda h: (gap(h), h[0]))
    return AttributeCalibration(
        best[0], best[1], best[2], independent_accuracy, clean_accuracy, gap(best) == 0, tuple(history)
    )


def _shortfall(attr_acc, tumor_acc, independent, clean, tolerance, max_drop):
    return max(0.0, independent - tolerance - attr_acc) + max(0.0, clean - tumor_acc - max_drop)
