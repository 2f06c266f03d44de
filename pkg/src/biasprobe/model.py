"""Multinomial logistic regression trained by full-batch gradient descent."""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeError, SizeError, TrainingDivergenceError


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.1
    epochs: int = 500
    l2: float = 1e-4
    seed: int = 0
    tol: float = 1e-8

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError("learning rate must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.l2 < 0:
            raise ConfigError("l2 penalty must be non-negative")

    @classmethod
    def from_dict(cls, raw):
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**raw)


@dataclass(frozen=True, eq=False)
class ClassifierModel:
    """Softmax weights over standardised features.

    ``weights`` is k x (d + 1); the last column is the bias. Raw rows are
    standardised with the stored ``mean`` and ``scale`` before scoring.
    """

    weights: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    config: TrainConfig = field(default_factory=TrainConfig)
    epochs_run: int = 0
    final_loss: float = float("nan")

    @property
    def k(self):
        return self.weights.shape[0]

    @property
    def d(self):
        return self.weights.shape[1] - 1

    def _design(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.d:
            raise ShapeError(f"expected rows of length {self.d}, got shape {X.shape}")
        Xs = (X - self.mean) / self.scale
        return np.hstack([Xs, np.ones((X.shape[0], 1))])

    def logits(self, X):
        return self._design(X) @ self.weights.T

    def predict_many(self, X):
        # argmax returns the first maximum, i.e. the lowest class index on ties
        return np.argmax(self.logits(X), axis=1)

    def to_dict(self):
        return {
            "schema_version": 1,
            "k": self.k,
            "d": self.d,
            "weights": self.weights.tolist(),
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "config": asdict(self.config),
            "epochs_run": self.epochs_run,
            "final_loss": self.final_loss,
        }

    @classmethod
    def from_dict(cls, raw):
        return cls(
            weights=np.asarray(raw["weights"], dtype=np.float64),
            mean=np.asarray(raw["mean"], dtype=np.float64),
            scale=np.asarray(raw["scale"], dtype=np.float64),
            config=TrainConfig(**raw["config"]),
            epochs_run=raw.get("epochs_run", 0),
            final_loss=raw.get("final_loss", float("nan")),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _standardizer(X):
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    return mean, scale


def _loss_grad(W, Xa, Y, l2):
    n = Xa.shape[0]
    Z = Xa @ W.T
    zmax = Z.max(axis=1, keepdims=True)
    E = np.exp(Z - zmax)
    S = E.sum(axis=1, keepdims=True)
    lse = np.log(S) + zmax
    Wf = W[:, :-1]
    loss = float(np.sum(lse - np.sum(Z * Y, axis=1, keepdims=True)) / n + 0.5 * l2 * np.sum(Wf * Wf))
    P = E / S
    G = (P - Y).T @ Xa / n
    G[:, :-1] += l2 * Wf
    return loss, G


def _onehot(y, k):
    Y = np.zeros((len(y), k))
    Y[np.arange(len(y)), y] = 1.0
    return Y


def train(train_set, config=None):
    """Fit softmax regression on ``train_set`` with full-batch gradient descent.

    Stops after ``config.epochs`` or once the loss changes by less than
    ``config.tol`` between epochs. Raises ``TrainingDivergenceError`` when
    the loss or weights stop being finite.
    """
    cfg = config or TrainConfig()
    X = train_set.features
    k, d = train_set.k, train_set.d
    mean, scale = _standardizer(X)
    Xa = np.hstack([(X - mean) / scale, np.ones((X.shape[0], 1))])
    Y = _onehot(train_set.labels, k)
    rng = np.random.default_rng(cfg.seed)
    W = 0.01 * rng.standard_normal((k, d + 1))
    prev = np.inf
    loss = np.nan
    epoch = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, cfg.epochs + 1):
            loss, G = _loss_grad(W, Xa, Y, cfg.l2)
            if not np.isfinite(loss) or not np.all(np.isfinite(G)):
                raise TrainingDivergenceError(epoch, loss)
            if abs(prev - loss) < cfg.tol:
                break
            prev = loss
            W = W - cfg.lr * G
    return ClassifierModel(weights=W, mean=mean, scale=scale, config=cfg, epochs_run=epoch, final_loss=loss)


def loss_and_gradient(model, dataset):
    """Regularised cross-entropy of ``model`` on ``dataset`` and its exact gradient."""
    if dataset.d != model.d or dataset.k != model.k:
        raise ShapeError("dataset dimensions do not match the model")
    Xa = model._design(dataset.features)
    return _loss_grad(model.weights, Xa, _onehot(dataset.labels, model.k), model.config.l2)


def predict(model, feature_row):
    row = np.asarray(feature_row, dtype=np.float64)
    if row.ndim != 1:
        raise ShapeError("predict takes a single feature row")
    return int(model.predict_many(row[None, :])[0])


def accuracy(model, dataset):
    if dataset.n == 0:
        raise SizeError("cannot score an empty dataset")
    return float(np.mean(model.predict_many(dataset.features) == dataset.labels))


def stamp(X, triggers):
    """Copy of matrix ``X`` with every trigger's features overwritten by its value."""
    out = np.array(X, dtype=np.float64, copy=True)
    if hasattr(triggers, "features"):
        triggers = [triggers]
    for t in triggers:
        out[:, list(t.features)] = t.value
    return out


def attack_accuracy(model, test_set, trigger, target_label):
    """Share of triggered non-target test samples predicted as ``target_label``.

    ``trigger`` may be one trigger or a sequence applied in order.
    """
    keep = test_set.labels != target_label
    if not np.any(keep):
        raise SizeError("no test samples outside the target class")
    X = stamp(test_set.features[keep], trigger)
    return float(np.mean(model.predict_many(X) == target_label))
