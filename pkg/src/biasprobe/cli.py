"""Command-line front end.

Every subcommand reads the shared JSON run configuration (``--config``),
writes its artifacts into ``--out`` and finishes by writing
``manifest.json`` with the configuration hash, the master seed and a
SHA-256 for every artifact.

Exit codes: 0 success, 2 configuration or I/O problem, 3 training failure,
4 pipeline-stage failure (the stage is named on stderr).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .audit import build_library, design_audit, partition, run_audit
from .config import RunConfig
from .data import Dataset, aggregate_snv, load_csv, save_csv, sidecar_path, synthesize
from .errors import (
    BiasProbeError,
    ConfigError,
    ParseError,
    StageError,
    TrainingDivergenceError,
    UnknownNameError,
    VocabularyError,
)
from .leak import (
    AccuracyCurve,
    FittedCurve,
    ReferenceLibrary,
    clean_and_fit,
    detect,
    read_curve_csv,
    sweep,
    write_curves_csv,
)
from .poison import BackdoorPlan
from .stats import chi2_scores
from .svg import write_curves_svg
from .trigger import ExclusionList, clean_baseline, search_triggers, write_search_report

log = logging.getLogger("biasprobe")

EXIT_OK, EXIT_CONFIG, EXIT_TRAINING, EXIT_STAGE = 0, 2, 3, 4
MANIFEST_SCHEMA = 1
# written every run but not byte-stable (wall-clock timings), so never hashed
UNHASHED = ("runtime.json",)


class Run:
    """Per-invocation context: resolved config, output directory, artifact list."""

    def __init__(self, command, config, out_dir, jobs, inputs=()):
        self.command = command
        self.config = config
        self.out = Path(out_dir)
        self.jobs = jobs
        self.inputs = list(inputs)
        self.artifacts = []

    def path(self, name):
        p = self.out / name
        self.artifacts.append(p)
        return p

    def write_json(self, name, payload):
        self.path(name).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")

    def write_manifest(self):
        files = {}
        for p in sorted(set(self.artifacts)):
            if p.exists() and p.name not in UNHASHED:
                files[str(p.relative_to(self.out))] = _sha256(p)
        inputs = {}
        for p in self.inputs:
            if p is not None and Path(p).exists():
                inputs[str(p)] = _sha256(Path(p))
        manifest = {
            "schema_version": MANIFEST_SCHEMA,
            "tool": "biasprobe",
            "version": __version__,
            "command": self.command,
            "config_sha256": self.config.digest(),
            "seed": self.config.seed,
            "inputs": inputs,
            "artifacts": files,
        }
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
        return manifest


def _sha256(path):
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _need(value, what):
    if value is None:
        raise ConfigError(f"missing {what} (pass it on the command line or under 'paths' in the config)")
    return value


def _load_dataset(path, what="dataset"):
    p = Path(_need(path, what))
    if not p.exists():
        raise ConfigError(f"{what} file not found: {p}")
    return load_csv(p)


def _load_json(path, what):
    p = Path(_need(path, what))
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read {what} {p}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} {p} is not valid JSON: {exc}") from exc


def _exclusion(run):
    path = run.config.paths.get("exclusion")
    if not path:
        return ExclusionList()
    try:
        return ExclusionList.from_file(path)
    except OSError as exc:
        raise ConfigError(f"cannot read exclusion list {path}: {exc}") from exc


def _say(args, text):
    if not args.quiet:
        print(text)


# --------------------------------------------------------------------------
# Subcommands


def cmd_synth(args, run):
    ds = synthesize(run.config.synth_config())
    target = run.path(args.file or "data.csv")
    save_csv(ds, target)
    run.artifacts.append(sidecar_path(target))
    _say(args, json.dumps(ds.summary(), indent=2))
    return ds


def cmd_ingest(args, run):
    if args.snv:
        ds = _ingest_snv(args.input, args.snv)
    else:
        ds = _load_dataset(args.input, "input dataset")
    target = run.path(args.file or "dataset.csv")
    save_csv(ds, target)
    run.artifacts.append(sidecar_path(target))
    _say(args, json.dumps(ds.summary(), indent=2))
    return ds


def _ingest_snv(samples_path, records_path):
    """Samples table (``id,label,<attributes>``) plus per-variant records into a gene matrix."""
    try:
        with Path(samples_path).open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        with Path(records_path).open(newline="", encoding="utf-8") as fh:
            recs = list(csv.DictReader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read SNV input: {exc}") from exc
    if not rows or len(rows[0]) < 2 or rows[0][1].strip() != "label":
        raise ParseError("samples table header must start with 'id,label'", row=1)
    need = {"sample_id", "gene", "mutation_type", "impact"}
    if recs and not need <= set(recs[0]):
        raise ParseError(f"SNV records need columns {sorted(need)}", row=1)
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if r]
    ids = [r[0] for r in body]
    genes = sorted({r["gene"] for r in recs})
    if not genes:
        raise ParseError("no SNV records", row=2)
    X = aggregate_snv(
        [(r["sample_id"], r["gene"], r["mutation_type"], r["impact"]) for r in recs], ids, genes
    )
    labels = [r[1] for r in body]
    class_names = tuple(sorted(set(labels)))
    attrs, groups = {}, {}
    for j, name in enumerate(header[2:], start=2):
        vals = [r[j] for r in body]
        groups[name] = tuple(sorted(set(vals)))
        attrs[name] = np.array([groups[name].index(v) for v in vals])
    return Dataset(
        sample_ids=tuple(ids),
        features=X,
        labels=np.array([class_names.index(v) for v in labels]),
        feature_names=tuple(genes),
        class_names=class_names,
        attributes=attrs,
        group_names=groups,
    )


def cmd_chi2(args, run):
    ds = _load_dataset(args.dataset or run.config.paths.get("dataset"))
    report = chi2_scores(ds, args.target)
    report.to_csv(run.path("chi2.csv"), ds.feature_names)
    top = [ds.feature_names[j] for j in report.ranking[: args.top]]
    _say(args, "top features: " + ", ".join(top))
    return report


def cmd_trigger_search(args, run):
    ds = _load_dataset(args.dataset or run.config.paths.get("dataset"))
    cfg = run.config
    parts = partition(ds, cfg)
    search_cfg = cfg.search_config()
    if args.floor is not None:
        search_cfg = type(search_cfg).from_dict({**search_cfg.__dict__, "attack_floor": args.floor})
    target = args.target_label if args.target_label is not None else cfg.secondary["target"]
    target = _need(target, "target label (--target-label)")
    exclusion = _exclusion(run)
    exclusion.resolve(ds)  # warns about names the dataset does not have
    baseline = clean_baseline(parts.train, parts.test, search_cfg.train)
    results = search_triggers(parts.train, parts.test, int(target), search_cfg, exclusion, run.jobs, baseline)
    write_search_report(run.path("trigger_search.json"), results, baseline, parts.train, search_cfg)
    _say(args, f"{len(results)} trigger(s) satisfy the constraints (clean baseline {baseline:.4f})")
    return results


def cmd_attr_design(args, run):
    ds = _load_dataset(args.dataset or run.config.paths.get("collab") or run.config.paths.get("dataset"))
    design = design_audit(ds, run.config, _exclusion(run), run.jobs, run.out)
    for name in ("attribute.json", "trigger_search.json", "plan.json"):
        run.artifacts.append(run.out / name)
    _say(args, json.dumps(design.summary(), indent=2))
    return design


def _plan(run, override):
    return BackdoorPlan.from_dict(_load_json(override or run.config.paths.get("plan"), "plan"))


def cmd_sweep(args, run):
    ds = _load_dataset(args.dataset or run.config.paths.get("collab") or run.config.paths.get("dataset"))
    plan = _plan(run, args.plan)
    parts = partition(ds, run.config)
    train = parts.base if args.on_base else parts.train
    source = parts.source if args.on_base else None
    cfg = run.config.sweep_config()
    curve = sweep(
        train, plan, cfg.p_grid, cfg.repeats, parts.test, seed=cfg.seed, train_config=cfg.train,
        jobs=run.jobs, group=run.config.attribute["group"], common_random_numbers=cfg.common_random_numbers,
        poison_source=source,
    )
    curve.to_csv(run.path("curve.csv"))
    run.write_json("curve.json", {"schema_version": 1, "curve": curve.to_dict()})
    _say(args, "x: " + " ".join(f"{v:g}" for v in curve.x))
    _say(args, "y: " + " ".join(f"{v:.3f}" for v in curve.y))
    return curve


def _read_curve(path):
    p = Path(_need(path, "curve"))
    if not p.exists():
        raise ConfigError(f"curve file not found: {p}")
    if p.suffix == ".json":
        raw = json.loads(p.read_text(encoding="utf-8"))
        return AccuracyCurve.from_dict(raw.get("curve", raw))
    return read_curve_csv(p)


def cmd_fit(args, run):
    curve = _read_curve(args.curve or run.config.paths.get("curve"))
    cleaned, fit = clean_and_fit(curve)
    run.write_json("fit.json", {
        "schema_version": 1,
        "fit": fit.to_dict(),
        "removed": list(cleaned.removed),
        "flags": list(cleaned.flags),
    })
    _say(args, f"a={fit.a:.4f} b={fit.b:.5f} c={fit.c:.4f} rmse={fit.rmse:.4f}")
    return fit


def cmd_reflib(args, run):
    ds = _load_dataset(args.dataset or run.config.paths.get("collab") or run.config.paths.get("dataset"))
    plan = _plan(run, args.plan)
    parts = partition(ds, run.config)
    holder = type("Design", (), {"plan": plan, "source": parts.source, "base": parts.base, "test": parts.test})
    lib = build_library(ds, holder, run.config, run.jobs, run.out)
    run.artifacts.append(run.out / "reflib.json")
    named = [(f"s={s:.2f}", c) for s, c in sorted(lib.curves.items())]
    write_curves_csv(run.path("curves.csv"), named)
    write_curves_svg(run.path("curves.svg"), [(f"reference s={s:.2f}", f, "solid") for s, f in lib.fits.items()])
    for s, f in lib.fits.items():
        _say(args, f"s={s:.2f}  a={f.a:.4f} b={f.b:.5f} c={f.c:.4f}")
    return lib


def cmd_detect(args, run):
    lib = ReferenceLibrary.from_dict(
        _load_json(args.library or run.config.paths.get("reference_library"), "reference library")
    )
    path = args.curve or run.config.paths.get("curve")
    if path and Path(path).suffix == ".json" and "fit" in _load_json(path, "curve"):
        cloud = FittedCurve.from_dict(_load_json(path, "curve")["fit"])
    else:
        cloud = _read_curve(path)
    d = run.config.detect
    report = detect(cloud, lib, d["threshold"], d["grid_size"], d["s_true"])
    run.write_json("detection.json", report.to_dict())
    run.path("detection.txt").write_text(report.to_text(), encoding="utf-8")
    _say(args, report.to_text().rstrip())
    return report


AUDIT_FILES = (
    "attribute.json", "trigger_search.json", "plan.json", "reflib.json", "cloud_curve.json",
    "curves.csv", "curves.svg", "detection.json", "detection.txt", "audit.json", "runtime.json",
)


def cmd_audit(args, run):
    paths = run.config.paths
    collab = _load_dataset(args.collab or paths.get("collab"), "collaborator dataset")
    cloud = _load_dataset(args.cloud or paths.get("cloud"), "cloud dataset")
    run.inputs += [args.collab or paths.get("collab"), args.cloud or paths.get("cloud")]
    run.artifacts += [run.out / n for n in AUDIT_FILES]
    audit, _, _, report = run_audit(collab, cloud, run.config, run.out, _exclusion(run), run.jobs)
    _say(args, report.to_text().rstrip())
    return audit


def cmd_report(args, run):
    src = Path(args.audit_dir or run.out)
    audit = _load_json(src / "audit.json", "audit report")
    lib = ReferenceLibrary.from_dict(_load_json(src / "reflib.json", "reference library"))
    cloud_fit = FittedCurve.from_dict(audit["cloud"]["fit"])
    det = audit["detection"]
    lines = [
        f"biased: {'yes' if det['biased'] else 'no'}",
        f"estimated share s_hat: {det['s_hat']:.2f} (threshold {det['threshold']:.2f})",
        f"clean accuracy: {audit['baseline']['clean_accuracy']:.4f}",
        "attribute learning: {:.4f} vs independent {:.4f} (tumour {:.4f}, fraction {:.2f}, {})".format(
            audit["attribute"]["attribute_accuracy"],
            audit["attribute"]["independent_accuracy"],
            audit["attribute"]["tumor_accuracy"],
            audit["attribute"]["fraction"],
            "passed" if audit["attribute"]["passed"] else "below parity",
        ),
        "secondary trigger: {} = {:g} -> class {} (attack {:.3f}, clean {:.4f}, {})".format(
            ",".join(audit["secondary"].get("feature_names", [])),
            audit["secondary"]["value"],
            audit["secondary"]["target_class"],
            audit["secondary"]["attack_acc"],
            audit["secondary"]["clean_acc"],
            audit["secondary"]["status"],
        ),
        "reference fits:",
    ]
    for s, f in lib.fits.items():
        lines.append(f"  s={s:.2f}  a={f.a:.4f} b={f.b:.5f} c={f.c:.4f}  mse={det['mse'].get(f'{s:.4f}', float('nan')):.3g}")
    lines.append(f"cloud fit: a={cloud_fit.a:.4f} b={cloud_fit.b:.5f} c={cloud_fit.c:.4f}")
    text = "\n".join(lines) + "\n"
    run.path("report.txt").write_text(text, encoding="utf-8")
    series = [(f"reference s={s:.2f}", f, "solid") for s, f in lib.fits.items()] + [("cloud", cloud_fit, "dashed")]
    write_curves_svg(run.path("report.svg"), series)
    _say(args, text.rstrip())
    return text


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "chi2": cmd_chi2,
    "trigger-search": cmd_trigger_search,
    "attr-design": cmd_attr_design,
    "sweep": cmd_sweep,
    "fit": cmd_fit,
    "reflib": cmd_reflib,
    "detect": cmd_detect,
    "audit": cmd_audit,
    "report": cmd_report,
}


def _u64(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=_u64, help="master seed (overrides the config)")
    common.add_argument("--out", help="output directory (default: current directory)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps and searches")
    common.add_argument("--quiet", action="store_true", help="only print warnings and errors")

    parser = argparse.ArgumentParser(prog="biasprobe", description="Dataset-bias auditing with tabular backdoors.")
    parser.add_argument("--version", action="version", version=f"biasprobe {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("file", nargs="?", help="output CSV name inside --out (default data.csv)")
    p = sub.add_parser("ingest", parents=[common], help="normalise a dataset CSV (or SNV records) for the pipeline")
    p.add_argument("input", help="dataset CSV, or a samples table when --snv is given")
    p.add_argument("--snv", help="per-variant records: sample_id,gene,mutation_type,impact")
    p.add_argument("--file", help="output CSV name inside --out (default dataset.csv)")
    p = sub.add_parser("chi2", parents=[common], help="rank features by chi-squared score")
    p.add_argument("dataset", nargs="?")
    p.add_argument("--target", default="label", help="'label' or an attribute name")
    p.add_argument("--top", type=int, default=10)
    p = sub.add_parser("trigger-search", parents=[common], help="search single-feature backdoor triggers")
    p.add_argument("dataset", nargs="?")
    p.add_argument("--target-label", type=int)
    p.add_argument("--floor", type=float, help="attack-accuracy floor (overrides the config)")
    p = sub.add_parser("attr-design", parents=[common], help="design the attribute trigger and backdoor plan")
    p.add_argument("dataset", nargs="?")
    p = sub.add_parser("sweep", parents=[common], help="attack accuracy across poisoning percentages")
    p.add_argument("dataset", nargs="?")
    p.add_argument("--plan")
    p.add_argument("--on-base", action="store_true",
                   help="sweep the reference base with poison drawn from the source part")
    p = sub.add_parser("fit", parents=[common], help="outlier removal and saturation-curve fit")
    p.add_argument("curve", nargs="?")
    p = sub.add_parser("reflib", parents=[common], help="build the reference curve library")
    p.add_argument("dataset", nargs="?")
    p.add_argument("--plan")
    p = sub.add_parser("detect", parents=[common], help="match a cloud curve against the library")
    p.add_argument("curve", nargs="?")
    p.add_argument("--library")
    p = sub.add_parser("audit", parents=[common], help="run the full audit pipeline")
    p.add_argument("collab", nargs="?")
    p.add_argument("cloud", nargs="?")
    p = sub.add_parser("report", parents=[common], help="summarise an audit directory")
    p.add_argument("audit_dir", nargs="?")
    return parser


def _resolve_config(args):
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.quiet:
        cfg = cfg.replace(verbosity="quiet")
    return cfg


def _out_dir(args, cfg):
    out = Path(args.out or cfg.paths.get("out") or ".")
    if args.command == "synth" and out.suffix == ".csv":
        # `synth --out data.csv` names the file directly
        args.file = out.name
        out = out.parent
    if not out.is_dir():
        raise ConfigError(f"output directory does not exist: {out}")
    return out


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    stage = args.command
    try:
        cfg = _resolve_config(args)
        level = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}[cfg.verbosity]
        logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        run = Run(args.command, cfg, _out_dir(args, cfg), args.jobs, inputs=[args.config])
        try:
            COMMANDS[args.command](args, run)
        finally:
            run.write_manifest()
    except (ConfigError, ParseError, VocabularyError, UnknownNameError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergenceError as exc:
        print(f"error: training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except StageError as exc:
        print(f"error: stage {exc.stage!r} failed: {exc.cause}", file=sys.stderr)
        return EXIT_STAGE
    except BiasProbeError as exc:
        print(f"error: stage {stage!r} failed: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
