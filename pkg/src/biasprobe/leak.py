"""Poisoning sweeps, saturation-curve fitting and curve-matching bias detection.

Attack accuracy as a function of the number of poisoned samples ``x`` is
modelled as ``a * (1 - exp(b * x + c))`` with ``0 <= a <= 1`` and ``b <= 0``.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .data import make_biased_subset, split, trim_group
from .errors import (
    ConfigError,
    FitError,
    IncomparableCurvesError,
    SizeError,
    SweepError,
)
from .model import TrainConfig, stamp, train
from .poison import attribute_pool_size, inject_secondary, poison_attribute, poison_count

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_P_GRID = (1, 2, 5, 10, 15, 20, 30, 40)
DEFAULT_S_GRID = (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8)
_EXP_CAP = 50.0


# --------------------------------------------------------------------------
# Curves


@dataclass(frozen=True, eq=False)
class AccuracyCurve:
    """Mean attack accuracy per poisoned-sample count.

    ``raw`` holds the per-repeat accuracies (one row per point) so the
    means can be recomputed; ``flags`` carries warnings such as a refused
    outlier removal.
    """

    x: np.ndarray
    y: np.ndarray
    y_std: np.ndarray | None = None
    repeats: int = 1
    s: float | None = None
    attribute: str | None = None
    group: str | None = None
    percents: tuple = ()
    raw: tuple = ()
    flags: tuple = ()
    removed: tuple = ()

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if x.shape != y.shape or x.ndim != 1:
            raise SizeError("x and y must be 1-d and of equal length")
        if np.any(np.diff(x) <= 0):
            raise ConfigError("curve x values must be strictly increasing")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        ys = np.zeros_like(y) if self.y_std is None else np.asarray(self.y_std, dtype=np.float64)
        object.__setattr__(self, "y_std", ys)

    def __len__(self):
        return len(self.x)

    def to_dict(self):
        return {
            "x": self.x.tolist(),
            "y": self.y.tolist(),
            "y_std": self.y_std.tolist(),
            "repeats": self.repeats,
            "s": self.s,
            "attribute": self.attribute,
            "group": self.group,
            "percents": list(self.percents),
            "raw": [list(r) for r in self.raw],
            "flags": list(self.flags),
            "removed": list(self.removed),
        }

    @classmethod
    def from_dict(cls, raw):
        return cls(
            x=raw["x"],
            y=raw["y"],
            y_std=raw.get("y_std"),
            repeats=raw.get("repeats", 1),
            s=raw.get("s"),
            attribute=raw.get("attribute"),
            group=raw.get("group"),
            percents=tuple(raw.get("percents", ())),
            raw=tuple(tuple(r) for r in raw.get("raw", ())),
            flags=tuple(raw.get("flags", ())),
            removed=tuple(raw.get("removed", ())),
        )

    def to_csv(self, path):
        write_curves_csv(path, [("curve", self)])


def write_curves_csv(path, named_curves):
    """CSV with one block of ``x,y_mean,y_std,repeats`` rows per named curve."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        multi = len(named_curves) > 1
        w.writerow((["curve"] if multi else []) + ["x", "y_mean", "y_std", "repeats"])
        for name, c in named_curves:
            for xi, yi, si in zip(c.x, c.y, c.y_std):
                row = [int(xi) if float(xi).is_integer() else repr(float(xi)), repr(float(yi)), repr(float(si)), c.repeats]
                w.writerow(([name] if multi else []) + row)


def read_curve_csv(path):
    xs, ys, ss, reps = [], [], [], 1
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            xs.append(float(row["x"]))
            ys.append(float(row["y_mean"]))
            ss.append(float(row.get("y_std") or 0.0))
            reps = int(row.get("repeats") or 1)
    return AccuracyCurve(x=xs, y=ys, y_std=ss, repeats=reps)


def saturation(x, a, b, c):
    return a * (1.0 - np.exp(np.minimum(b * np.asarray(x, dtype=np.float64) + c, _EXP_CAP)))


@dataclass(frozen=True)
class FittedCurve:
    a: float
    b: float
    c: float
    rmse: float
    x_min: float
    x_max: float
    iterations: int = 0

    def __call__(self, x):
        return saturation(x, self.a, self.b, self.c)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, raw):
        return cls(**raw)


def _initial_guess(x, y):
    a0 = float(np.clip(np.max(y), 1e-3, 1.0))
    ratio = np.clip(1.0 - y / a0, 1e-3, None)
    if np.ptp(x) > 0:
        b0, c0 = np.polyfit(x, np.log(ratio), 1)
    else:
        b0, c0 = -1e-3, float(np.mean(np.log(ratio)))
    b0 = min(float(b0), -1e-6)
    return np.array([a0, b0, float(c0)])


def _project(p):
    return np.array([min(max(p[0], 0.0), 1.0), min(p[1], 0.0), p[2]])


def _jacobian(x, p):
    a, b, c = p
    e = np.exp(np.minimum(b * x + c, _EXP_CAP))
    return np.column_stack([1.0 - e, -a * x * e, -a * e])


def fit_curve(curve, max_iter=200, step_tol=1e-9, init=None):
    """Levenberg-Marquardt fit of ``a * (1 - exp(b x + c))`` with box projection.

    Raises ``FitError`` (carrying the best parameters) if the step size
    has not fallen below ``step_tol`` after ``max_iter`` iterations.
    """
    x = np.asarray(curve.x, dtype=np.float64)
    y = np.asarray(curve.y, dtype=np.float64)
    if len(x) < 4:
        raise SizeError(f"need at least 4 points to fit, got {len(x)}")
    p = _project(_initial_guess(x, y) if init is None else np.asarray(init, dtype=np.float64))
    r = y - saturation(x, *p)
    sse = float(r @ r)
    mu = 1e-3
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        J = _jacobian(x, p)
        A = J.T @ J
        g = J.T @ r
        # parameters resting on a bound and pushed outward are held fixed
        free = np.array([
            not ((p[0] >= 1.0 and g[0] > 0) or (p[0] <= 0.0 and g[0] < 0)),
            not (p[1] >= 0.0 and g[1] > 0),
            True,
        ])
        accepted = False
        while mu < 1e16:
            delta = np.zeros(3)
            Af = A[np.ix_(free, free)]
            try:
                delta[free] = np.linalg.solve(Af + mu * np.diag(np.maximum(np.diag(Af), 1e-12)), g[free])
            except np.linalg.LinAlgError:
                mu *= 10
                continue
            cand = _project(p + delta)
            rc = y - saturation(x, *cand)
            sc = float(rc @ rc)
            if sc <= sse:
                step = float(np.linalg.norm(cand - p))
                p, r, sse = cand, rc, sc
                mu = max(mu / 10, 1e-12)
                accepted = True
                break
            mu *= 10
        if not accepted or step < step_tol:
            converged = True
            break
    rmse = float(np.sqrt(sse / len(x)))
    if not converged:
        raise FitError(f"no convergence after {max_iter} iterations", params=tuple(p), rmse=rmse)
    return FittedCurve(float(p[0]), float(p[1]), float(p[2]), rmse, float(x.min()), float(x.max()), it)


def _subcurve(curve, keep, flags=None, removed=()):
    keep = np.asarray(keep)
    return AccuracyCurve(
        x=curve.x[keep],
        y=curve.y[keep],
        y_std=curve.y_std[keep],
        repeats=curve.repeats,
        s=curve.s,
        attribute=curve.attribute,
        group=curve.group,
        percents=tuple(curve.percents[i] for i in keep) if curve.percents else (),
        raw=tuple(curve.raw[i] for i in keep) if curve.raw else (),
        flags=curve.flags if flags is None else flags,
        removed=tuple(removed),
    )


def remove_outliers(curve, factor=2.0, max_fraction=0.2, min_points=4, floor=1e-3):
    """Drop points whose residual from a preliminary fit is far above typical.

    One point (the worst) is removed per round, then the curve is refit. A
    point is an outlier when its absolute residual exceeds ``factor`` times
    the median absolute residual (and ``floor``, which keeps numerically
    exact curves intact). At most ``max_fraction`` of the points go. If the
    flagged set would leave fewer than ``min_points``, nothing is removed
    and the returned curve carries an ``outlier_removal_refused`` flag.
    """
    n = len(curve)
    if n < 5:
        raise SizeError(f"outlier removal needs at least 5 points, got {n}")
    cap = int(np.floor(max_fraction * n))
    keep = list(range(n))
    removed = []
    while len(removed) < cap:
        sub = _subcurve(curve, keep)
        try:
            fit = fit_curve(sub)
        except FitError as exc:
            fit = FittedCurve(*exc.params, exc.rmse, 0, 0)
        res = np.abs(sub.y - fit(sub.x))
        thresh = max(factor * float(np.median(res)), floor)
        flagged = np.flatnonzero(res > thresh)
        if len(flagged) == 0:
            break
        if len(keep) - len(flagged) < min_points:
            return _subcurve(curve, range(n), flags=curve.flags + ("outlier_removal_refused",))
        worst = int(flagged[np.argmax(res[flagged])])
        removed.append(float(sub.x[worst]))
        del keep[worst]
    if not removed:
        return curve
    return _subcurve(curve, keep, removed=removed)


# --------------------------------------------------------------------------
# Sweeps


@dataclass(frozen=True)
class SweepConfig:
    p_grid: tuple = DEFAULT_P_GRID
    repeats: int = 10
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    common_random_numbers: bool = True

    def __post_init__(self):
        p = tuple(float(v) for v in self.p_grid)
        if not p:
            raise ConfigError("p_grid must not be empty")
        if any(b <= a for a, b in zip(p, p[1:])):
            raise ConfigError("p_grid must be strictly increasing")
        if p[0] < 0:
            raise ConfigError("poison percentages must be non-negative")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        object.__setattr__(self, "p_grid", p)

    @classmethod
    def from_dict(cls, raw):
        raw = dict(raw)
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown sweep config keys: {sorted(unknown)}")
        if "train" in raw and not isinstance(raw["train"], TrainConfig):
            raw["train"] = TrainConfig.from_dict(raw["train"])
        return cls(**raw)

    def to_dict(self):
        out = asdict(self)
        out["p_grid"] = list(self.p_grid)
        return out


def _cell_seeds(seed, p_index, repeat, crn):
    # with common random numbers all percentages of one repeat share draws
    key = [int(seed), int(repeat)] if crn else [int(seed), int(p_index), int(repeat)]
    ss = np.random.SeedSequence(key)
    a, b, t = ss.generate_state(3)
    return int(a), int(b), int(t)


def _secondary_rows(poisoned, plan, x_p, seed, nested):
    if not nested:
        return inject_secondary(poisoned, plan, x_p, seed)
    # nested selection: the first x_p rows of one seeded permutation of the pool
    from .data import ATTR, ATTR_BD

    pool = np.flatnonzero(poisoned.poison_tags == ATTR)
    if x_p > len(pool):
        return inject_secondary(poisoned, plan, x_p, seed)
    if x_p == 0:
        return poisoned
    chosen = np.sort(np.random.default_rng(seed).permutation(pool)[:x_p])
    X = stamp(poisoned.features[chosen], plan.secondary_trigger)
    return poisoned.append_copies(chosen, X, np.full(x_p, plan.target_label), tag=ATTR_BD, suffix="bd")


def double_backdoor_attack(train_set, test_set, plan, x_p, seeds, train_config, nested=True,
                           poison_source=None):
    """Train on one double-backdoored set; return the secondary attack accuracy.

    Poisoned rows are copies of ``train_set`` rows, or of ``poison_source``
    rows when given (the contributor's own samples appended to someone
    else's clean data). Attack test rows are the non-target test samples
    carrying both the attribute trigger and the secondary trigger.
    """
    attr_seed, bd_seed, train_seed = seeds
    source = train_set if poison_source is None else poison_source
    poisoned = poison_attribute(source, plan.attribute_trigger, plan.attr_fraction, attr_seed)
    poisoned = _secondary_rows(poisoned, plan, x_p, bd_seed, nested)
    if poison_source is not None:
        poisoned = train_set.concat(poisoned.take(np.arange(source.n, poisoned.n)))
    cfg = TrainConfig(**{**asdict(train_config), "seed": train_seed})
    model = train(poisoned, cfg)
    keep = test_set.labels != plan.target_label
    if not np.any(keep):
        raise SizeError("no non-target test samples")
    X = stamp(test_set.features[keep], [plan.attribute_trigger, plan.secondary_trigger])
    return float(np.mean(model.predict_many(X) == plan.target_label))


def _sweep_job(args):
    train_set, test_set, plan, x_p, seeds, train_config, nested, source, p, r = args
    try:
        return double_backdoor_attack(train_set, test_set, plan, x_p, seeds, train_config, nested, source)
    except Exception as exc:  # tag the failing cell
        raise SweepError(p, r, exc) from exc


def sweep_points(train_set, plan, p_grid):
    """``(percent, x)`` pairs for the grid, dropping percentages whose count repeats."""
    pool = attribute_pool_size(train_set, plan.attribute_trigger.attribute, plan.attr_fraction)
    out, seen = [], set()
    for p in p_grid:
        x = poison_count(p, pool)
        if x in seen:
            continue
        seen.add(x)
        out.append((p, x))
    return out, pool


def run_jobs(fn, jobs_args, jobs=1):
    if jobs > 1 and len(jobs_args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, jobs_args, chunksize=1))
    return [fn(a) for a in jobs_args]


def sweep(train_set, plan, p_grid=DEFAULT_P_GRID, repeats=10, test_set=None, seed=0,
          train_config=None, jobs=1, s=None, group=None, common_random_numbers=True,
          poison_source=None):
    """Attack accuracy of the secondary backdoor across poisoning percentages.

    For each percentage ``p`` the poisoned count is ``poison_count(p, pool)``
    where ``pool`` is the attribute-poisoned pool size (of ``poison_source``
    when given, else of ``train_set``); each point is the mean over
    ``repeats`` independently seeded poison-and-train runs.
    """
    if test_set is None:
        raise ConfigError("sweep needs a test set")
    cfg = SweepConfig(tuple(p_grid), repeats, seed, train_config or TrainConfig(), common_random_numbers)
    points, _ = sweep_points(train_set if poison_source is None else poison_source, plan, cfg.p_grid)
    job_args = []
    for pi, (p, x) in enumerate(points):
        for r in range(cfg.repeats):
            seeds = _cell_seeds(cfg.seed, pi, r, cfg.common_random_numbers)
            job_args.append(
                (train_set, test_set, plan, x, seeds, cfg.train, cfg.common_random_numbers, poison_source, p, r)
            )
    acc = np.asarray(run_jobs(_sweep_job, job_args, jobs)).reshape(len(points), cfg.repeats)
    if s is None and plan.attribute_trigger.attribute in train_set.attributes and group is not None:
        from .data import sample_percentage

        s = sample_percentage(train_set, plan.attribute_trigger.attribute, group)
    return AccuracyCurve(
        x=[x for _, x in points],
        y=acc.mean(axis=1),
        y_std=acc.std(axis=1),
        repeats=cfg.repeats,
        s=s,
        attribute=plan.attribute_trigger.attribute,
        group=group,
        percents=tuple(p for p, _ in points),
        raw=tuple(tuple(float(v) for v in row) for row in acc),
    )


def clean_and_fit(curve):
    """Outlier removal (when there are enough points) followed by a fit."""
    if len(curve) >= 5:
        curve = remove_outliers(curve)
    try:
        return curve, fit_curve(curve)
    except FitError as exc:
        log.warning("curve fit did not converge; using best-so-far parameters")
        a, b, c = exc.params
        return curve, FittedCurve(a, b, c, exc.rmse, float(curve.x.min()), float(curve.x.max()), -1)


# --------------------------------------------------------------------------
# Reference library and detection


def _s_key(s):
    return f"{float(s):.4f}"


@dataclass(frozen=True, eq=False)
class ReferenceLibrary:
    attribute: str
    group: str
    fits: dict
    curves: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)

    def __post_init__(self):
        fits = {float(s): f for s, f in self.fits.items()}
        for s in fits:
            if not 0.5 - 1e-9 <= s < 1.0:
                raise ConfigError(f"reference s={s} outside [0.5, 1.0)")
        object.__setattr__(self, "fits", dict(sorted(fits.items())))
        object.__setattr__(self, "curves", {float(s): c for s, c in self.curves.items()})

    def __len__(self):
        return len(self.fits)

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "attribute": self.attribute,
            "group": self.group,
            "references": [
                {
                    "s": s,
                    "fit": self.fits[s].to_dict(),
                    "curve": self.curves[s].to_dict() if s in self.curves else None,
                }
                for s in self.fits
            ],
            "sweep": self.sweep,
            "provenance": self.provenance,
            "failures": {_s_key(s): msg for s, msg in self.failures.items()},
        }

    @classmethod
    def from_dict(cls, raw):
        if raw.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(f"unsupported reference library schema {raw.get('schema_version')}")
        fits, curves = {}, {}
        for ref in raw["references"]:
            fits[ref["s"]] = FittedCurve.from_dict(ref["fit"])
            if ref.get("curve"):
                curves[ref["s"]] = AccuracyCurve.from_dict(ref["curve"])
        return cls(
            attribute=raw["attribute"],
            group=raw["group"],
            fits=fits,
            curves=curves,
            sweep=raw.get("sweep", {}),
            provenance=raw.get("provenance", {}),
            failures={float(k): v for k, v in raw.get("failures", {}).items()},
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def build_reference_library(collab_data, attribute, group, s_grid, plan, sweep_config=None,
                            split_pair=None, split_seed=0, jobs=1, removable_groups=None,
                            poison_source=None):
    """Reference saturation curves from artificially biased copies of the collaborator data.

    The collaborator data is split 60-40 (unless ``split_pair`` is given);
    only the training part is biased, so the test part stays constant. The
    training part is first trimmed to the lowest ``s`` in the grid if its
    share is above it. Each
    ``s`` in ``s_grid`` yields a biased subset, a double-backdoor sweep,
    outlier removal and a fit. Failures are recorded per ``s``; at least two
    entries must succeed.

    With ``poison_source`` the poisoned rows come from that dataset and are
    appended to each biased subset, so every curve shares one x grid. Under
    common random numbers every ``s`` reuses the sweep seed, which makes the
    curves differ only through the bias of the clean data.
    """
    s_grid = [float(s) for s in s_grid]
    if not s_grid:
        raise ConfigError("s_grid must not be empty")
    cfg = sweep_config or SweepConfig()
    pair = split_pair or split(collab_data, 0.6, split_seed)
    base = trim_group(pair.train, attribute, group, min(s_grid), seed=cfg.seed)
    fits, curves, failures = {}, {}, {}
    for si, s in enumerate(s_grid):
        try:
            biased = make_biased_subset(
                base, attribute, group, s, seed=cfg.seed, removable_groups=removable_groups
            )
            curve = sweep(
                biased, plan, cfg.p_grid, cfg.repeats, pair.test,
                seed=cfg.seed if cfg.common_random_numbers else _library_seed(cfg.seed, si),
                train_config=cfg.train, jobs=jobs, s=s, group=group,
                common_random_numbers=cfg.common_random_numbers, poison_source=poison_source,
            )
            curve, fit = clean_and_fit(curve)
        except Exception as exc:  # recorded per s; the library decides validity below
            log.warning("reference s=%s failed: %s", s, exc)
            failures[s] = f"{type(exc).__name__}: {exc}"
            continue
        fits[s] = fit
        curves[s] = curve
    if len(fits) < 2:
        raise IncomparableCurvesError(f"only {len(fits)} reference curves succeeded: {failures}")
    return ReferenceLibrary(
        attribute=attribute,
        group=str(group),
        fits=fits,
        curves=curves,
        sweep=cfg.to_dict(),
        provenance={
            "seed": cfg.seed,
            "dataset_sha256": collab_data.fingerprint(),
            "split_seed": split_seed,
            "poison_source_sha256": poison_source.fingerprint() if poison_source is not None else None,
        },
        failures=failures,
    )


def _library_seed(seed, index):
    return int(np.random.SeedSequence([int(seed), 7919, int(index)]).generate_state(1)[0])


@dataclass(frozen=True)
class DetectionReport:
    mse: dict
    s_hat: float
    biased: bool
    threshold: float = 0.55
    cloud_fit: FittedCurve | None = None
    s_true: float | None = None
    skipped: tuple = ()

    @property
    def error(self):
        return None if self.s_true is None else abs(self.s_hat - self.s_true)

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "mse": {_s_key(s): v for s, v in sorted(self.mse.items())},
            "s_hat": self.s_hat,
            "biased": self.biased,
            "threshold": self.threshold,
            "cloud_fit": self.cloud_fit.to_dict() if self.cloud_fit else None,
            "s_true": self.s_true,
            "error": self.error,
            "skipped": list(self.skipped),
        }

    def to_text(self):
        lines = [
            f"biased: {'yes' if self.biased else 'no'}",
            f"estimated sample percentage: {self.s_hat:.2f}",
            f"threshold: {self.threshold:.2f}",
        ]
        if self.s_true is not None:
            lines.append(f"true sample percentage: {self.s_true:.2f} (error {self.error:.2f})")
        lines.append("mse by reference s:")
        for s, v in sorted(self.mse.items()):
            mark = " *" if s == self.s_hat else ""
            lines.append(f"  {s:.2f}  {v:.6g}{mark}")
        return "\n".join(lines) + "\n"


def curve_mse(f1, f2, grid_size=100):
    lo, hi = max(f1.x_min, f2.x_min), min(f1.x_max, f2.x_max)
    if not hi > lo:
        raise IncomparableCurvesError(f"validity ranges do not overlap ([{lo}, {hi}])")
    grid = np.linspace(lo, hi, grid_size)
    return float(np.mean((f1(grid) - f2(grid)) ** 2))


def detect(cloud_curve, library, threshold=0.55, grid_size=100, s_true=None):
    """Match the cloud's curve against every reference; smallest MSE wins.

    Curves are compared as fitted functions on ``grid_size`` points spanning
    the overlap of their x ranges. Ties go to the smaller ``s``.
    """
    if len(library) < 2:
        raise ConfigError("reference library needs at least 2 entries")
    if isinstance(cloud_curve, FittedCurve):
        cloud_fit = cloud_curve
    else:
        _, cloud_fit = clean_and_fit(cloud_curve)
    mse, skipped = {}, []
    for s, ref in sorted(library.fits.items()):
        try:
            mse[s] = curve_mse(cloud_fit, ref, grid_size)
        except IncomparableCurvesError:
            skipped.append(s)
    if not mse:
        raise IncomparableCurvesError("cloud curve overlaps no reference curve")
    s_hat = min(mse, key=lambda s: (mse[s], s))
    return DetectionReport(
        mse=mse,
        s_hat=s_hat,
        biased=bool(s_hat >= threshold - 1e-9),
        threshold=threshold,
        cloud_fit=cloud_fit,
        s_true=s_true,
        skipped=tuple(skipped),
    )
