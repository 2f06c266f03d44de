"""End-to-end bias audit: collaborator-side design, reference curves, cloud sweep, detection.

The collaborator data is split into a test part and a training part. The
training part designs both triggers and is then divided again: a *source*
part that supplies every poisoned copy the collaborator contributes, and a
*reference base* that is biased to each ``s`` in the grid. The cloud's
training data plays the role of the reference base in the cloud sweep, with
the same poisoned rows appended. Only the clean data then differs between a
reference curve and the cloud curve.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

from .data import SplitPair, split
from .errors import BiasProbeError, InfeasibleError, StageError
from .leak import (
    build_reference_library,
    clean_and_fit,
    detect,
    sweep,
    write_curves_csv,
)
from .poison import (
    BackdoorPlan,
    calibrate_attribute_poisoning,
    choose_secondary_target,
    design_attribute_trigger,
    train_independent_attribute_model,
)
from .svg import write_curves_svg
from .trigger import ExclusionList, clean_baseline, evaluate_candidates

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class _Stage:
    """Context manager that times a stage and wraps failures in ``StageError``."""

    def __init__(self, name, timings):
        self.name = name
        self.timings = timings

    def __enter__(self):
        log.info("stage %s", self.name)
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.timings[self.name] = round(time.perf_counter() - self.t0, 3)
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def _write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


@dataclass(frozen=True, eq=False)
class AuditDesign:
    """Everything the collaborator derives before touching the cloud."""

    plan: BackdoorPlan
    clean_accuracy: float
    independent_accuracy: float
    calibration: object
    secondary: dict
    candidates: tuple
    test: object
    source: object
    base: object
    train: object

    def summary(self):
        at = self.plan.attribute_trigger
        cal = self.calibration
        return {
            "baseline": {"clean_accuracy": self.clean_accuracy},
            "attribute": {
                "trigger": at.to_dict(),
                "fraction": self.plan.attr_fraction,
                "attribute_accuracy": cal.attribute_accuracy,
                "tumor_accuracy": cal.tumor_accuracy,
                "independent_accuracy": self.independent_accuracy,
                "passed": cal.passed,
            },
            "secondary": self.secondary,
            "sizes": {
                "train": self.train.n,
                "test": self.test.n,
                "source": self.source.n,
                "reference_base": self.base.n,
            },
        }


def _select_secondary(scored, baseline, search_cfg, fallback):
    def ok_clean(r):
        return baseline - r.clean_accuracy <= search_cfg.clean_drop_ceiling

    passing = [r for r in scored if r.attack_accuracy >= search_cfg.attack_floor and ok_clean(r)]
    if passing:
        return passing[0], "constraints_met"
    if not scored:
        raise InfeasibleError("no candidate secondary trigger could be evaluated")
    if not fallback:
        raise InfeasibleError("no secondary trigger satisfies the attack floor and clean ceiling")
    within = [r for r in scored if ok_clean(r)]
    if within:
        return within[0], "floor_relaxed"
    return scored[0], "constraints_relaxed"


@dataclass(frozen=True, eq=False)
class Partition:
    train: object
    test: object
    source: object
    base: object


def partition(collab, config):
    """Seeded split of the collaborator data into train/test, then train into source/base."""
    pair = split(collab, config.split["train_fraction"], config.seed)
    inner = split(pair.train, config.split["source_fraction"], config.seed + 1)
    return Partition(pair.train, pair.test, inner.train, inner.test)


def design_audit(collab, config, exclusion=None, jobs=1, out_dir=None, timings=None):
    """Collaborator-side stages: baseline, attribute trigger, validation, secondary trigger.

    ``exclusion`` is an ``ExclusionList`` of feature names no trigger may use.
    Artifacts (``attribute.json``, ``trigger_search.json``, ``plan.json``) are
    written to ``out_dir`` as each stage finishes.
    """
    cfg = config
    timings = {} if timings is None else timings
    out = Path(out_dir) if out_dir is not None else None
    tcfg = cfg.train_config()
    acfg = cfg.attribute
    exclusion = exclusion or ExclusionList()

    with _Stage("baseline", timings):
        parts = partition(collab, cfg)
        train, test, source, base = parts.train, parts.test, parts.source, parts.base
        baseline = clean_baseline(train, test, tcfg)

    with _Stage("attribute-design", timings):
        banned = exclusion.resolve(train)
        at = design_attribute_trigger(train, acfg["name"], acfg["m"], acfg["score_against"], exclude=banned)

    with _Stage("attribute-validation", timings):
        _, independent = train_independent_attribute_model(train, acfg["name"], tcfg, test)
        stop = acfg["stop"] if acfg["calibrate"] else acfg["fraction"]
        cal = calibrate_attribute_poisoning(
            train, test, at, tcfg,
            start=acfg["fraction"], step=acfg["step"], stop=stop,
            tolerance=acfg["tolerance"], ceiling=acfg["ceiling"], slack=acfg["slack"],
            seed=cfg.seed, independent_accuracy=independent, clean_accuracy=baseline,
        )
        if not cal.passed:
            log.warning(
                "attribute learning below parity (attribute %.3f vs independent %.3f, tumour %.3f vs %.3f)",
                cal.attribute_accuracy, independent, cal.tumor_accuracy, baseline,
            )
        if out is not None:
            _write_json(out / "attribute.json", {
                "schema_version": SCHEMA_VERSION,
                "trigger": at.to_dict(),
                "clean_accuracy": baseline,
                "independent_accuracy": independent,
                "history": [
                    {"fraction": f, "attribute_accuracy": a, "tumor_accuracy": t} for f, a, t in cal.history
                ],
                "chosen_fraction": cal.fraction,
                "passed": cal.passed,
            })

    with _Stage("trigger-search", timings):
        sec = cfg.secondary
        target = sec["target"]
        if target is None:
            target = choose_secondary_target(train, at.encoding, sec["mode"], cfg.seed)
        names = set(exclusion.names) | {train.feature_names[j] for j in at.features}
        search_cfg = cfg.search_config()
        scored = evaluate_candidates(train, test, int(target), search_cfg, ExclusionList(names), jobs, baseline)
        choice, status = _select_secondary(scored, baseline, search_cfg, sec["fallback"])
        if status != "constraints_met":
            log.warning("no secondary trigger met the constraints; using the best candidate (%s)", status)
        plan = BackdoorPlan(at, choice.trigger, int(target), cal.fraction, cfg.seed)
        secondary = {
            **choice.to_dict(train.feature_names),
            "target_label": int(target),
            "target_class": train.class_names[int(target)],
            "status": status,
            "n_candidates": len(scored),
        }
        if out is not None:
            _write_json(out / "trigger_search.json", {
                "schema_version": SCHEMA_VERSION,
                "clean_baseline": baseline,
                "target_label": int(target),
                "chosen": secondary,
                "candidates": [r.to_dict(train.feature_names) for r in scored],
            })
            plan.save(out / "plan.json")

    return AuditDesign(
        plan=plan,
        clean_accuracy=baseline,
        independent_accuracy=independent,
        calibration=cal,
        secondary=secondary,
        candidates=tuple(scored),
        test=test,
        source=source,
        base=base,
        train=train,
    )


def build_library(collab, design, config, jobs=1, out_dir=None, timings=None):
    """Reference curves over ``config.s_grid`` from the design's reference base.

    ``design`` needs ``plan``, ``source``, ``base`` and ``test`` attributes.
    """
    timings = {} if timings is None else timings
    with _Stage("reference-library", timings):
        lib = build_reference_library(
            collab,
            config.attribute["name"],
            config.attribute["group"],
            config.s_grid,
            design.plan,
            config.sweep_config(),
            split_pair=SplitPair(design.base, design.test),
            split_seed=config.seed,
            jobs=jobs,
            poison_source=design.source,
        )
        if out_dir is not None:
            lib.save(Path(out_dir) / "reflib.json")
    return lib


@dataclass(frozen=True, eq=False)
class AuditReport:
    seed: int
    config_sha256: str
    inputs: dict
    design: dict
    library: dict
    cloud: dict
    detection: dict
    runtime: dict = field(default_factory=dict)

    @property
    def biased(self):
        return self.detection["biased"]

    @property
    def s_hat(self):
        return self.detection["s_hat"]

    def to_dict(self):
        """Serialisable form. Wall-clock timings are excluded so reruns match byte for byte."""
        return {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "config_sha256": self.config_sha256,
            "inputs": self.inputs,
            **self.design,
            "reference_library": self.library,
            "cloud": self.cloud,
            "detection": self.detection,
            "artifacts": {
                "attribute": "attribute.json",
                "trigger_search": "trigger_search.json",
                "plan": "plan.json",
                "reference_library": "reflib.json",
                "curves": "curves.csv",
                "cloud_curve": "cloud_curve.json",
                "detection": "detection.json",
                "runtime": "runtime.json",
            },
        }

    def save(self, path):
        _write_json(path, self.to_dict())


def _library_summary(lib):
    return {
        "attribute": lib.attribute,
        "group": lib.group,
        "s": list(lib.fits),
        "fits": {f"{s:.4f}": lib.fits[s].to_dict() for s in lib.fits},
        "failures": {f"{s:.4f}": m for s, m in sorted(lib.failures.items())},
    }


def run_audit(collab, cloud, config, out_dir=None, exclusion=None, jobs=1, design=None, library=None):
    """Full audit of ``cloud`` against references built from ``collab``.

    ``design`` and ``library`` may be passed in to reuse collaborator-side
    work across several clouds; the result is the same as recomputing them.
    Each stage writes its artifacts as soon as it finishes, so a failure
    leaves the earlier ones in place. Failures surface as ``StageError``
    naming the stage.
    """
    timings = {}
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    trainings = {}
    if design is None:
        design = design_audit(collab, config, exclusion, jobs, out, timings)
    elif out is not None:
        design.plan.save(out / "plan.json")
    if library is None:
        library = build_library(collab, design, config, jobs, out, timings)
    elif out is not None:
        library.save(out / "reflib.json")
    scfg = config.sweep_config()
    trainings["reference_library"] = len(library.curves) * len(scfg.p_grid) * scfg.repeats

    attribute, group = config.attribute["name"], config.attribute["group"]
    with _Stage("cloud-sweep", timings):
        if attribute not in cloud.attributes:
            # the hidden attribute is unknown to the auditor; the sweep never reads it
            log.info("cloud data carries no %r column", attribute)
        if cloud.feature_names != collab.feature_names:
            raise BiasProbeError("cloud and collaborator feature columns differ")
        curve = sweep(
            cloud, design.plan, scfg.p_grid, scfg.repeats, design.test,
            seed=scfg.seed, train_config=scfg.train, jobs=jobs,
            s=config.detect["s_true"], group=group if attribute in cloud.attributes else None,
            common_random_numbers=scfg.common_random_numbers, poison_source=design.source,
        )
        trainings["cloud_sweep"] = len(curve) * scfg.repeats
        cleaned, cloud_fit = clean_and_fit(curve)
        if out is not None:
            _write_json(out / "cloud_curve.json", {
                "schema_version": SCHEMA_VERSION,
                "curve": curve.to_dict(),
                "cleaned": cleaned.to_dict(),
                "fit": cloud_fit.to_dict(),
            })
            named = [(f"s={s:.2f}", c) for s, c in sorted(library.curves.items())] + [("cloud", curve)]
            write_curves_csv(out / "curves.csv", named)

    with _Stage("detection", timings):
        report = detect(
            cloud_fit, library, config.detect["threshold"], config.detect["grid_size"], config.detect["s_true"]
        )
        if out is not None:
            _write_json(out / "detection.json", report.to_dict())
            (out / "detection.txt").write_text(report.to_text(), encoding="utf-8")
            series = [(f"reference s={s:.2f}", f, "solid") for s, f in library.fits.items()]
            series.append(("cloud", cloud_fit, "dashed"))
            write_curves_svg(out / "curves.svg", series)

    audit = AuditReport(
        seed=config.seed,
        config_sha256=config.digest(),
        inputs={
            "collab_sha256": collab.fingerprint(),
            "cloud_sha256": cloud.fingerprint(),
            "collab_n": collab.n,
            "cloud_n": cloud.n,
            "d": collab.d,
            "k": collab.k,
        },
        design=design.summary(),
        library=_library_summary(library),
        cloud={
            "x": cleaned.x.tolist(),
            "y": cleaned.y.tolist(),
            "removed": list(cleaned.removed),
            "fit": cloud_fit.to_dict(),
        },
        detection=report.to_dict(),
        runtime={"seconds": timings, "trainings": trainings},
    )
    if out is not None:
        audit.save(out / "audit.json")
        _write_json(out / "runtime.json", {"schema_version": SCHEMA_VERSION, **audit.runtime})
    return audit, design, library, report


__all__ = [
    "AuditDesign",
    "Partition",
    "partition",
    "AuditReport",
    "build_library",
    "design_audit",
    "run_audit",
]
