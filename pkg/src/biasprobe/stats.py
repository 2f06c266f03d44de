"""Chi-squared feature scoring, Gaussian KDE and low-density value search."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BoundsError,
    DegenerateDistributionError,
    DegenerateTargetError,
    DomainError,
    UnknownNameError,
)

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class Chi2Report:
    scores: np.ndarray
    ranking: np.ndarray

    def to_csv(self, path, feature_names=None):
        rank = np.empty_like(self.ranking)
        rank[self.ranking] = np.arange(len(self.ranking))
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature", "score", "rank"])
            for j in self.ranking:
                name = feature_names[j] if feature_names is not None else str(j)
                w.writerow([name, repr(float(self.scores[j])), int(rank[j]) + 1])


def chi2_statistic(X, y):
    """Per-feature chi-squared scores of a non-negative matrix against targets ``y``.

    Observed counts are per-class column sums; expected counts distribute the
    column total by class prior. Terms with zero expectation contribute 0.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if np.any(X < 0):
        raise DomainError("chi-squared scoring needs non-negative feature values")
    classes, inv = np.unique(y, return_inverse=True)
    if len(classes) < 2:
        raise DegenerateTargetError("target has fewer than 2 populated groups")
    Y = np.zeros((len(y), len(classes)))
    Y[np.arange(len(y)), inv] = 1.0
    observed = Y.T @ X
    prior = Y.sum(axis=0) / len(y)
    expected = np.outer(prior, X.sum(axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(expected > 0, (observed - expected) ** 2 / expected, 0.0)
    return terms.sum(axis=0)


def _rank(scores):
    # stable sort on negated scores keeps ascending index among ties
    return np.argsort(-np.asarray(scores), kind="stable")


def chi2_scores(dataset, target="label"):
    """Score every feature of ``dataset`` against its labels or an attribute.

    ``target`` is ``"label"`` for the class column or an attribute name.
    """
    if target == "label":
        y = dataset.labels
    else:
        if target not in dataset.attributes:
            raise UnknownNameError(f"unknown attribute {target!r}")
        y = dataset.attributes[target]
    scores = chi2_statistic(dataset.features, y)
    return Chi2Report(scores=scores, ranking=_rank(scores))


def rank_features(report, top_m):
    d = len(report.ranking)
    if not 1 <= top_m <= d:
        raise BoundsError(f"top_m must be in [1, {d}], got {top_m}")
    return [int(i) for i in report.ranking[:top_m]]


@dataclass(frozen=True, eq=False)
class DensityModel:
    """Gaussian kernel density with bandwidth ``factor`` times the population std."""

    samples: np.ndarray
    bandwidth: float
    factor: float = 0.5

    def __call__(self, x):
        return density(self, x)

    def to_dict(self):
        return {
            "bandwidth": self.bandwidth,
            "factor": self.factor,
            "n": int(len(self.samples)),
            "min": float(self.samples.min()),
            "max": float(self.samples.max()),
            "samples": [float(v) for v in self.samples],
        }

    def to_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def fit_kde(values, factor=0.5):
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size < 2:
        raise DegenerateDistributionError("KDE needs at least 2 values")
    sigma = float(v.std())
    h = factor * sigma
    if not h > 0:
        raise DegenerateDistributionError("values have zero spread; bandwidth would be 0")
    v = v.copy()
    v.setflags(write=False)
    return DensityModel(samples=v, bandwidth=h, factor=factor)


def density(model, x):
    """Evaluate the kernel density at scalar or array ``x``."""
    x_arr = np.asarray(x, dtype=np.float64)
    flat = x_arr.ravel()
    h = model.bandwidth
    s = model.samples
    out = np.empty(flat.shape)
    norm = 1.0 / (len(s) * h * _SQRT_2PI)
    chunk = max(1, 2_000_000 // len(s))
    for i in range(0, flat.size, chunk):
        z = (flat[i:i + chunk, None] - s[None, :]) / h
        out[i:i + chunk] = np.exp(-0.5 * z * z).sum(axis=1) * norm
    if x_arr.ndim == 0:
        return float(out[0])
    return out.reshape(x_arr.shape)


def lowest_density_candidates(model, k=10, grid_points=512):
    """Up to ``k`` grid values in ascending density, at least one bandwidth apart.

    The grid spans the observed data range only.
    """
    if k < 0:
        raise BoundsError("k must be non-negative")
    if grid_points < 2:
        raise BoundsError("grid_points must be at least 2")
    if k == 0:
        return []
    lo, hi = float(model.samples.min()), float(model.samples.max())
    grid = np.linspace(lo, hi, grid_points)
    dens = density(model, grid)
    picked = []
    for i in np.argsort(dens, kind="stable"):
        v = float(grid[i])
        if all(abs(v - p) >= model.bandwidth for p in picked):
            picked.append(v)
            if len(picked) == k:
                break
    return picked
