"""Dataset container, CSV ingestion, synthetic generation and bias construction."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    ConfigError,
    InfeasibleError,
    ParseError,
    SizeError,
    UnknownNameError,
    VocabularyError,
)

SCHEMA_VERSION = 1
ATTR_PREFIX = "attr:"
POISON_TAG_COLUMN = "poison_tag"
POISON_TAGS = ("clean", "attr", "attr+bd")
CLEAN, ATTR, ATTR_BD = 0, 1, 2

# Default SNV severity maps; both are overridable per call.
TYPE_WEIGHTS = {"deleterious": 1.0, "tolerated": 0.5}
IMPACT_WEIGHTS = {"high": 1.0, "moderate": 0.66, "low": 0.33, "modifier": 0.1}


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable table of non-negative features, class labels and hidden attributes.

    ``attributes`` maps an attribute name to a per-sample group index into
    ``group_names[name]``. ``poison_tags`` records provenance of appended
    rows (0 clean, 1 attribute-triggered, 2 attribute + secondary trigger).
    """

    sample_ids: tuple
    feature_names: tuple
    features: np.ndarray
    labels: np.ndarray
    class_names: tuple
    attributes: Mapping[str, np.ndarray] = field(default_factory=dict)
    group_names: Mapping[str, tuple] = field(default_factory=dict)
    feature_shift: np.ndarray | None = None
    poison_tags: np.ndarray | None = None

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "sample_ids", tuple(str(s) for s in self.sample_ids))
        set_(self, "feature_names", tuple(str(f) for f in self.feature_names))
        set_(self, "class_names", tuple(str(c) for c in self.class_names))
        X = _frozen(self.features, np.float64)
        if X.ndim != 2:
            raise SizeError(f"features must be a 2-d matrix, got shape {X.shape}")
        n, d = X.shape
        if n < 1 or d < 1:
            raise SizeError(f"dataset needs n >= 1 and d >= 1, got {X.shape}")
        if len(self.sample_ids) != n:
            raise SizeError("sample_ids length does not match feature rows")
        if len(self.feature_names) != d:
            raise SizeError("feature_names length does not match feature columns")
        if not np.all(np.isfinite(X)):
            raise ParseError("features contain non-finite values")
        if np.any(X < 0):
            raise ParseError("features must be non-negative (min-shift on ingestion)")
        k = len(self.class_names)
        if k < 2:
            raise VocabularyError(f"need at least 2 classes, got {k}")
        y = _frozen(self.labels, np.int64)
        if y.shape != (n,):
            raise SizeError("labels must have one entry per sample")
        if np.any(y < 0) or np.any(y >= k):
            raise VocabularyError("label index outside the class vocabulary")
        attrs, groups = {}, {}
        for name, idx in self.attributes.items():
            names = tuple(str(g) for g in self.group_names[name])
            idx = _frozen(idx, np.int64)
            if idx.shape != (n,):
                raise SizeError(f"attribute {name!r} must assign a group to every sample")
            if np.any(idx < 0) or np.any(idx >= len(names)):
                raise VocabularyError(f"attribute {name!r} has an invalid group index")
            attrs[name] = idx
            groups[name] = names
        set_(self, "attributes", attrs)
        set_(self, "group_names", groups)
        set_(self, "features", X)
        set_(self, "labels", y)
        shift = np.zeros(d) if self.feature_shift is None else self.feature_shift
        set_(self, "feature_shift", _frozen(shift, np.float64))
        tags = np.zeros(n, dtype=np.int8) if self.poison_tags is None else self.poison_tags
        set_(self, "poison_tags", _frozen(tags, np.int8))

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1]

    @property
    def k(self):
        return len(self.class_names)

    def group_index(self, attribute, group):
        if attribute not in self.attributes:
            raise UnknownNameError(f"unknown attribute {attribute!r}")
        names = self.group_names[attribute]
        if isinstance(group, (int, np.integer)):
            if not 0 <= group < len(names):
                raise UnknownNameError(f"group index {group} out of range for {attribute!r}")
            return int(group)
        try:
            return names.index(str(group))
        except ValueError:
            raise UnknownNameError(f"unknown group {group!r} for attribute {attribute!r}") from None

    def label_index(self, label):
        if isinstance(label, (int, np.integer)):
            if not 0 <= label < self.k:
                raise UnknownNameError(f"label index {label} out of range")
            return int(label)
        try:
            return self.class_names.index(str(label))
        except ValueError:
            raise UnknownNameError(f"unknown class {label!r}") from None

    def take(self, indices):
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            sample_ids=[self.sample_ids[i] for i in idx],
            feature_names=self.feature_names,
            features=self.features[idx],
            labels=self.labels[idx],
            class_names=self.class_names,
            attributes={a: v[idx] for a, v in self.attributes.items()},
            group_names=self.group_names,
            feature_shift=self.feature_shift,
            poison_tags=self.poison_tags[idx],
        )

    def append_copies(self, indices, features, labels, tag, suffix):
        """Return a new dataset with modified copies of ``indices`` appended.

        Originals are untouched; copies inherit attributes of their source row.
        """
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            sample_ids=self.sample_ids + tuple(f"{self.sample_ids[i]}~{suffix}" for i in idx),
            feature_names=self.feature_names,
            features=np.vstack([self.features, features]),
            labels=np.concatenate([self.labels, labels]),
            class_names=self.class_names,
            attributes={a: np.concatenate([v, v[idx]]) for a, v in self.attributes.items()},
            group_names=self.group_names,
            feature_shift=self.feature_shift,
            poison_tags=np.concatenate([self.poison_tags, np.full(len(idx), tag, np.int8)]),
        )

    def concat(self, other):
        """Rows of ``self`` followed by rows of ``other`` (same schema required)."""
        if (
            other.feature_names != self.feature_names
            or other.class_names != self.class_names
            or dict(other.group_names) != dict(self.group_names)
        ):
            raise VocabularyError("datasets disagree on features, classes or attribute groups")
        return Dataset(
            sample_ids=self.sample_ids + other.sample_ids,
            feature_names=self.feature_names,
            features=np.vstack([self.features, other.features]),
            labels=np.concatenate([self.labels, other.labels]),
            class_names=self.class_names,
            attributes={a: np.concatenate([v, other.attributes[a]]) for a, v in self.attributes.items()},
            group_names=self.group_names,
            feature_shift=self.feature_shift,
            poison_tags=np.concatenate([self.poison_tags, other.poison_tags]),
        )

    def with_labels(self, labels, class_names):
        return Dataset(
            sample_ids=self.sample_ids,
            feature_names=self.feature_names,
            features=self.features,
            labels=labels,
            class_names=class_names,
            attributes=self.attributes,
            group_names=self.group_names,
            feature_shift=self.feature_shift,
            poison_tags=self.poison_tags,
        )

    def fingerprint(self):
        """SHA-256 over features, labels and attributes; stable across processes."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.features).tobytes())
        h.update(np.ascontiguousarray(self.labels).tobytes())
        for name in sorted(self.attributes):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.attributes[name]).tobytes())
        return h.hexdigest()

    def summary(self):
        out = {"n": self.n, "d": self.d, "k": self.k, "sample_percentage": {}}
        for name, groups in self.group_names.items():
            out["sample_percentage"][name] = {
                g: sample_percentage(self, name, g) for g in groups
            }
        return out


# --------------------------------------------------------------------------
# CSV ingestion


def sidecar_path(path):
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def _natural_vocab(values):
    uniq = sorted(set(values))
    try:
        return sorted(uniq, key=int)
    except ValueError:
        return uniq


def load_csv(path):
    """Read a dataset from CSV (plus its sidecar JSON when present).

    Each feature column is shifted so that its minimum is zero; the shift
    is added to any shift already recorded in the sidecar.
    """
    path = Path(path)
    meta = None
    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text(encoding="utf-8"))

    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty file", row=1) from None
        if "label" not in header:
            raise ParseError("header has no 'label' column", row=1)
        li = header.index("label")
        if li < 2:
            raise ParseError("header needs an id column and at least one feature before 'label'", row=1)
        feature_names = header[1:li]
        attr_cols, tag_col = [], None
        for j in range(li + 1, len(header)):
            name = header[j]
            if name == POISON_TAG_COLUMN:
                tag_col = j
            elif name.startswith(ATTR_PREFIX):
                attr_cols.append((j, name[len(ATTR_PREFIX):]))
            else:
                raise ParseError(f"unexpected column {name!r} after 'label'", row=1, column=name)

        ids, rows, label_str, tags = [], [], [], []
        attr_str = {a: [] for _, a in attr_cols}
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise ParseError(
                    f"expected {len(header)} fields, got {len(rec)}", row=lineno
                )
            ids.append(rec[0].strip())
            vals = []
            for j in range(1, li):
                try:
                    v = float(rec[j])
                except ValueError:
                    raise ParseError(
                        f"non-numeric feature value {rec[j]!r}", row=lineno, column=header[j]
                    ) from None
                if not math.isfinite(v):
                    raise ParseError("non-finite feature value", row=lineno, column=header[j])
                vals.append(v)
            rows.append(vals)
            label_str.append(rec[li].strip())
            for j, a in attr_cols:
                attr_str[a].append(rec[j].strip())
            if tag_col is not None:
                t = rec[tag_col].strip()
                if t not in POISON_TAGS:
                    raise VocabularyError(f"unknown poison tag {t!r} at row {lineno}")
                tags.append(POISON_TAGS.index(t))
    if not rows:
        raise SizeError("file contains no data rows")

    class_names = meta["class_names"] if meta else _natural_vocab(label_str)
    labels = []
    for i, s in enumerate(label_str):
        if s not in class_names:
            raise VocabularyError(f"unknown label {s!r} at row {i + 2}")
        labels.append(class_names.index(s))

    attributes, group_names = {}, {}
    for _, a in attr_cols:
        vocab = meta["attributes"][a] if meta and a in meta.get("attributes", {}) else _natural_vocab(attr_str[a])
        idx = []
        for i, s in enumerate(attr_str[a]):
            if s not in vocab:
                raise VocabularyError(f"unknown group {s!r} for attribute {a!r} at row {i + 2}")
            idx.append(vocab.index(s))
        attributes[a] = idx
        group_names[a] = vocab

    X = np.asarray(rows, dtype=np.float64)
    col_min = X.min(axis=0)
    shift = np.where(col_min < 0, -col_min, 0.0)
    X = X + shift
    prior = np.asarray(meta["feature_shift"], dtype=np.float64) if meta else np.zeros(X.shape[1])
    return Dataset(
        sample_ids=ids,
        feature_names=feature_names,
        features=X,
        labels=labels,
        class_names=class_names,
        attributes=attributes,
        group_names=group_names,
        feature_shift=prior + shift,
        poison_tags=tags if tag_col is not None else None,
    )


def save_csv(dataset, path, include_tags=None):
    """Write ``dataset`` as CSV plus a ``.meta.json`` sidecar.

    The ``poison_tag`` column is written when any row is poisoned, or when
    ``include_tags`` is true.
    """
    path = Path(path)
    if not path.parent.exists():
        raise FileNotFoundError(f"output directory does not exist: {path.parent}")
    if include_tags is None:
        include_tags = bool(np.any(dataset.poison_tags != CLEAN))
    attrs = list(dataset.attributes)
    header = ["sample_id", *dataset.feature_names, "label", *(ATTR_PREFIX + a for a in attrs)]
    if include_tags:
        header.append(POISON_TAG_COLUMN)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(dataset.n):
            row = [dataset.sample_ids[i], *(repr(float(v)) for v in dataset.features[i])]
            row.append(dataset.class_names[dataset.labels[i]])
            for a in attrs:
                row.append(dataset.group_names[a][dataset.attributes[a][i]])
            if include_tags:
                row.append(POISON_TAGS[dataset.poison_tags[i]])
            w.writerow(row)
    meta = {
        "schema_version": SCHEMA_VERSION,
        "class_names": list(dataset.class_names),
        "attributes": {a: list(g) for a, g in dataset.group_names.items()},
        "feature_shift": [float(s) for s in dataset.feature_shift],
    }
    sidecar_path(path).write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return path


# --------------------------------------------------------------------------
# SNV encoding


def encode_snv(mutation_type, impact, type_weights=None, impact_weights=None):
    """Severity score of one variant: type weight times impact weight."""
    tw = TYPE_WEIGHTS if type_weights is None else type_weights
    iw = IMPACT_WEIGHTS if impact_weights is None else impact_weights
    try:
        return float(tw[str(mutation_type).lower()]) * float(iw[str(impact).lower()])
    except KeyError as exc:
        raise VocabularyError(f"unknown SNV category {exc.args[0]!r}") from None


def aggregate_snv(records, sample_ids, genes, type_weights=None, impact_weights=None):
    """Per-(sample, gene) SNV matrix from ``(sample, gene, type, impact)`` records.

    Multiple variants in one gene of one sample are summed.
    """
    si = {s: i for i, s in enumerate(sample_ids)}
    gi = {g: j for j, g in enumerate(genes)}
    out = np.zeros((len(sample_ids), len(genes)))
    for sample, gene, mtype, impact in records:
        if sample not in si or gene not in gi:
            continue
        out[si[sample], gi[gene]] += encode_snv(mtype, impact, type_weights, impact_weights)
    return out


# --------------------------------------------------------------------------
# Synthetic data


@dataclass(frozen=True)
class AttributeSpec:
    name: str
    groups: tuple = ("male", "female")
    shares: tuple = (0.5, 0.5)

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))
        object.__setattr__(self, "shares", tuple(float(s) for s in self.shares))


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the synthetic mutation-count generator.

    ``class_signal`` scales class-specific log-rate offsets, present on a
    ``class_sparsity`` share of (class, feature) pairs. ``attribute_signal``
    scales the per-group offsets on the attribute-linked features and
    ``group_affinity`` controls how strongly tumour classes skew towards a
    group (so encoded labels exist). For the first attribute, each group
    also owns ``exclusive_classes`` classes that no other group can have,
    much like sex-specific cancers. ``noise`` is per-cell log-normal
    over-dispersion on top of Poisson sampling.
    """

    n_samples: int = 1000
    n_features: int = 200
    n_classes: int = 11
    attributes: tuple = (AttributeSpec("gender"),)
    class_signal: float = 0.3
    class_sparsity: float = 0.5
    attribute_signal: float = 1.0
    attribute_feature_fraction: float = 0.1
    group_affinity: float = 1.0
    exclusive_classes: int = 0
    base_rate: float = 1.0
    noise: float = 0.3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(
            self,
            "attributes",
            tuple(a if isinstance(a, AttributeSpec) else AttributeSpec(**a) for a in self.attributes),
        )

    @classmethod
    def from_dict(cls, raw):
        raw = dict(raw)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
        if "attributes" in raw:
            attrs = []
            for a in raw["attributes"]:
                extra = set(a) - {"name", "groups", "shares"}
                if extra:
                    raise ConfigError(f"unknown attribute spec keys: {sorted(extra)}")
                attrs.append(AttributeSpec(**a))
            raw["attributes"] = tuple(attrs)
        return cls(**raw)

    def to_dict(self):
        out = asdict(self)
        out["attributes"] = [
            {"name": a.name, "groups": list(a.groups), "shares": list(a.shares)} for a in self.attributes
        ]
        return out


def _apportion(shares, n):
    """Largest-remainder integer counts summing to ``n``."""
    raw = np.asarray(shares) * n
    counts = np.floor(raw).astype(int)
    rem = n - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:rem]] += 1
    return counts


def _check_synth(cfg):
    if cfg.n_classes < 2:
        raise ConfigError("n_classes must be >= 2")
    if cfg.exclusive_classes < 0:
        raise ConfigError("exclusive_classes must be >= 0")
    if cfg.attributes and cfg.exclusive_classes * len(cfg.attributes[0].groups) >= cfg.n_classes:
        raise ConfigError("exclusive classes must leave at least one shared class")
    if cfg.n_samples < 1 or cfg.n_features < 1:
        raise ConfigError("n_samples and n_features must be positive")
    names = set()
    for a in cfg.attributes:
        if a.name in names:
            raise ConfigError(f"duplicate attribute {a.name!r}")
        names.add(a.name)
        if len(a.groups) < 2 or len(a.groups) != len(a.shares):
            raise ConfigError(f"attribute {a.name!r} needs >= 2 groups with one share each")
        if len(set(a.groups)) != len(a.groups):
            raise ConfigError(f"attribute {a.name!r} has duplicate group names")
        if any(s < 0 for s in a.shares) or abs(sum(a.shares) - 1.0) > 1e-9:
            raise ConfigError(f"group shares of {a.name!r} must be non-negative and sum to 1")
        for g, s in zip(a.groups, a.shares):
            if s * cfg.n_samples < 1:
                raise ConfigError(
                    f"group {g!r} of {a.name!r}: share {s} x n_samples {cfg.n_samples} < 1 sample"
                )


def synthesize(config):
    """Generate a dataset of class-conditional over-dispersed Poisson counts.

    Group membership is apportioned exactly, so realised sample percentages
    match the requested shares to within one sample. Labels are drawn
    conditional on groups, and a designated subset of features carries a
    per-group log-rate offset so the attribute is learnable from genuine
    features.
    """
    cfg = config
    _check_synth(cfg)
    rng = np.random.default_rng(cfg.seed)
    n, d, k = cfg.n_samples, cfg.n_features, cfg.n_classes

    attributes, group_names = {}, {}
    for a in cfg.attributes:
        counts = _apportion(a.shares, n)
        idx = np.repeat(np.arange(len(a.groups)), counts)
        attributes[a.name] = rng.permutation(idx)
        group_names[a.name] = a.groups

    log_w = np.log(rng.dirichlet(np.full(k, 8.0)))
    logits = np.tile(log_w, (n, 1))
    for a in cfg.attributes:
        aff = cfg.group_affinity * rng.standard_normal((k, len(a.groups)))
        logits += aff[:, attributes[a.name]].T
    if cfg.attributes and cfg.exclusive_classes:
        first = cfg.attributes[0]
        for g in range(len(first.groups)):
            for j in range(cfg.exclusive_classes):
                c = g * cfg.exclusive_classes + j
                logits[attributes[first.name] != g, c] = -np.inf
    p = np.exp(logits - logits.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    u = rng.random(n)
    labels = np.minimum((p.cumsum(axis=1) < u[:, None]).sum(axis=1), k - 1)

    log_rate = np.log(cfg.base_rate) + 0.5 * rng.standard_normal(d)
    mask = rng.random((k, d)) < cfg.class_sparsity
    class_eff = cfg.class_signal * rng.standard_normal((k, d)) * mask
    eta = log_rate[None, :] + class_eff[labels]

    n_attr = max(1, int(round(cfg.attribute_feature_fraction * d)))
    for a in cfg.attributes:
        cols = np.sort(rng.choice(d, size=n_attr, replace=False))
        off = rng.standard_normal((len(a.groups), n_attr))
        off -= off.mean(axis=0, keepdims=True)
        off *= cfg.attribute_signal / max(np.abs(off).mean(), 1e-12)
        eta[:, cols] += off[attributes[a.name]]

    if cfg.noise > 0:
        eta = eta + cfg.noise * rng.standard_normal((n, d))
    X = rng.poisson(np.exp(eta)).astype(np.float64)

    width = max(4, len(str(n - 1)))
    return Dataset(
        sample_ids=[f"S{i:0{width}d}" for i in range(n)],
        feature_names=[f"G{j:05d}" for j in range(d)],
        features=X,
        labels=labels,
        class_names=[f"C{c:02d}" for c in range(k)],
        attributes=attributes,
        group_names=group_names,
    )


# --------------------------------------------------------------------------
# Splitting and bias construction


@dataclass(frozen=True)
class SplitPair:
    train: Dataset
    test: Dataset


def split(dataset, train_fraction=0.6, seed=0):
    if not 0.0 < train_fraction < 1.0:
        raise SizeError(f"train_fraction must lie strictly between 0 and 1, got {train_fraction}")
    n = dataset.n
    if n < 2:
        raise SizeError("need at least 2 samples to split")
    n_train = min(max(int(round(train_fraction * n)), 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    return SplitPair(dataset.take(np.sort(perm[:n_train])), dataset.take(np.sort(perm[n_train:])))


def sample_percentage(dataset, attribute, group):
    g = dataset.group_index(attribute, group)
    return float(np.mean(dataset.attributes[attribute] == g))


def removal_count(n, n_group, s_target, pool):
    """Number of non-group removals that brings ``n_group / n`` closest to ``s_target``."""
    s_now = n_group / n
    if s_target < s_now - 1e-12:
        raise InfeasibleError(
            f"target {s_target} is below the current sample percentage {s_now:.4f}; "
            "bias is only created by removing non-group samples"
        )
    if n_group == 0:
        raise InfeasibleError("biasing group has no samples")
    exact = n - n_group / s_target
    best = None
    for r in sorted({max(math.floor(exact), 0), max(math.ceil(exact), 0)}):
        if r > pool:
            continue
        err = abs(n_group / (n - r) - s_target)
        if best is None or err < best[1] - 1e-15:
            best = (r, err)
    if best is None:
        raise InfeasibleError(
            f"s={s_target} needs about {exact:.1f} removals but only {pool} removable samples exist"
        )
    return best[0]


def make_biased_subset(dataset, attribute, biasing_group, s_target, seed=0, removable_groups=None):
    """Remove non-group samples until the group's share is closest to ``s_target``.

    Removal order is a seeded permutation of the removable pool, so subsets
    for increasing targets are nested. ``removable_groups`` limits which
    groups may lose samples (all other groups by default).
    """
    g = dataset.group_index(attribute, biasing_group)
    idx = dataset.attributes[attribute]
    if removable_groups is None:
        removable = idx != g
    else:
        rg = [dataset.group_index(attribute, r) for r in removable_groups]
        if g in rg:
            raise ConfigError("the biasing group cannot be removable")
        removable = np.isin(idx, rg)
    pool = np.flatnonzero(removable)
    n_group = int(np.sum(idx == g))
    r = removal_count(dataset.n, n_group, float(s_target), len(pool))
    if r == 0:
        return dataset
    order = np.random.default_rng(seed).permutation(pool)
    keep = np.ones(dataset.n, dtype=bool)
    keep[order[:r]] = False
    return dataset.take(np.flatnonzero(keep))


def trim_group(dataset, attribute, group, s_target, seed=0):
    """Remove samples of ``group`` until its share is closest to ``s_target``.

    The counterpart of ``make_biased_subset`` for shares that are already
    too high, used to bring a base dataset down to the lowest reference
    percentage. Returns ``dataset`` unchanged when the share is not above
    ``s_target``.
    """
    g = dataset.group_index(attribute, group)
    idx = dataset.attributes[attribute]
    n_group = int(np.sum(idx == g))
    if not 0.0 < s_target < 1.0:
        raise InfeasibleError(f"s_target must lie strictly between 0 and 1, got {s_target}")
    if n_group / dataset.n <= s_target:
        return dataset
    members = np.flatnonzero(idx == g)
    r = removal_count(dataset.n, dataset.n - n_group, 1.0 - float(s_target), len(members))
    order = np.random.default_rng(seed).permutation(members)
    keep = np.ones(dataset.n, dtype=bool)
    keep[order[:r]] = False
    return dataset.take(np.flatnonzero(keep))
