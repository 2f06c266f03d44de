"""Run configuration shared by the command-line tools and the audit pipeline.

One JSON document configures every stage. Unknown keys anywhere are
rejected before any work starts. Seeds are not set per section: the single
master ``seed`` feeds every seeded component, so one number reproduces a run.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .data import SynthConfig, _check_synth
from .errors import ConfigError
from .leak import DEFAULT_P_GRID, DEFAULT_S_GRID, SweepConfig
from .model import TrainConfig
from .trigger import SearchConfig

SCHEMA_VERSION = 1

PATH_KEYS = ("dataset", "collab", "cloud", "exclusion", "out", "reference_library", "plan", "curve", "search_report")
VERBOSITY = ("quiet", "info", "debug")

DEFAULTS = {
    "attribute": {
        "name": "gender",
        "group": "male",
        "m": 10,
        "score_against": "label",
        "fraction": 0.2,
        "calibrate": True,
        "step": 0.1,
        "stop": 0.5,
        "tolerance": 0.05,
        "ceiling": 0.01,
        "slack": 0.01,
    },
    "secondary": {
        "target": None,
        "mode": "majority",
        "fallback": True,
    },
    "split": {
        "train_fraction": 0.6,
        "source_fraction": 1.0 / 3.0,
    },
    "sweep": {
        "p_grid": list(DEFAULT_P_GRID),
        "repeats": 10,
        "common_random_numbers": True,
    },
    "detect": {
        "s_grid": list(DEFAULT_S_GRID),
        "threshold": 0.55,
        "grid_size": 100,
        "s_true": None,
    },
}

_SEARCH_KEYS = set(SearchConfig.__dataclass_fields__) - {"seed", "train"}
_TRAIN_KEYS = set(TrainConfig.__dataclass_fields__) - {"seed"}
_SYNTH_KEYS = set(SynthConfig.__dataclass_fields__) - {"seed"}


def _merge_section(name, defaults, raw, allowed=None):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be an object")
    allowed = set(defaults) if allowed is None else allowed
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    return {**defaults, **raw}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    verbosity: str = "info"
    paths: dict = field(default_factory=dict)
    synth: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    search: dict = field(default_factory=dict)
    attribute: dict = field(default_factory=lambda: dict(DEFAULTS["attribute"]))
    secondary: dict = field(default_factory=lambda: dict(DEFAULTS["secondary"]))
    split: dict = field(default_factory=lambda: dict(DEFAULTS["split"]))
    sweep: dict = field(default_factory=lambda: dict(DEFAULTS["sweep"]))
    detect: dict = field(default_factory=lambda: dict(DEFAULTS["detect"]))

    @classmethod
    def from_dict(cls, raw):
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a JSON object")
        raw = copy.deepcopy(raw)
        version = raw.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema_version {version}")
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        seed = raw.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        verbosity = raw.get("verbosity", "info")
        if verbosity not in VERBOSITY:
            raise ConfigError(f"verbosity must be one of {VERBOSITY}")
        paths = _merge_section("paths", {}, raw.get("paths"), set(PATH_KEYS))
        for k, v in paths.items():
            if v is not None and not isinstance(v, str):
                raise ConfigError(f"path {k!r} must be a string")
        cfg = cls(
            seed=seed,
            verbosity=verbosity,
            paths=paths,
            synth=_merge_section("synth", {}, raw.get("synth"), _SYNTH_KEYS),
            train=_merge_section("train", {}, raw.get("train"), _TRAIN_KEYS),
            search=_merge_section("search", {}, raw.get("search"), _SEARCH_KEYS),
            attribute=_merge_section("attribute", DEFAULTS["attribute"], raw.get("attribute")),
            secondary=_merge_section("secondary", DEFAULTS["secondary"], raw.get("secondary")),
            split=_merge_section("split", DEFAULTS["split"], raw.get("split")),
            sweep=_merge_section("sweep", DEFAULTS["sweep"], raw.get("sweep")),
            detect=_merge_section("detect", DEFAULTS["detect"], raw.get("detect")),
        )
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(raw)

    def validate(self):
        """Build every typed sub-config once so bad values fail before any work."""
        if self.synth:
            self.synth_config()
        self.train_config()
        self.search_config()
        self.sweep_config()
        a = self.attribute
        if a["score_against"] not in ("label", "attribute"):
            raise ConfigError("attribute.score_against must be 'label' or 'attribute'")
        if not isinstance(a["m"], int) or a["m"] < 1:
            raise ConfigError("attribute.m must be a positive integer")
        for k in ("fraction", "stop"):
            if not 0 < a[k] <= 1:
                raise ConfigError(f"attribute.{k} must lie in (0, 1]")
        if self.secondary["mode"] not in ("majority", "random"):
            raise ConfigError("secondary.mode must be 'majority' or 'random'")
        for k in ("train_fraction", "source_fraction"):
            if not 0 < self.split[k] < 1:
                raise ConfigError(f"split.{k} must lie in (0, 1)")
        s_grid = [float(s) for s in self.detect["s_grid"]]
        if len(s_grid) < 2 or any(not 0.5 - 1e-9 <= s < 1.0 for s in s_grid):
            raise ConfigError("detect.s_grid needs at least 2 values in [0.5, 1.0)")
        if self.detect["grid_size"] < 2:
            raise ConfigError("detect.grid_size must be >= 2")

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "verbosity": self.verbosity,
            "paths": dict(sorted(self.paths.items())),
            "synth": self.synth,
            "train": self.train,
            "search": self.search,
            "attribute": self.attribute,
            "secondary": self.secondary,
            "split": self.split,
            "sweep": self.sweep,
            "detect": self.detect,
        }

    def digest(self):
        """SHA-256 over the canonical JSON form, ignoring verbosity and output path."""
        body = self.to_dict()
        body.pop("verbosity")
        body["paths"] = {k: v for k, v in body["paths"].items() if k != "out"}
        text = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def replace(self, **changes):
        raw = self.to_dict()
        for k, v in changes.items():
            if isinstance(v, dict) and isinstance(raw.get(k), dict):
                raw[k] = {**raw[k], **v}
            else:
                raw[k] = v
        return RunConfig.from_dict(raw)

    # typed views ---------------------------------------------------------

    def synth_config(self):
        try:
            cfg = SynthConfig.from_dict({**self.synth, "seed": self.seed})
        except TypeError as exc:
            raise ConfigError(f"bad synth section: {exc}") from exc
        _check_synth(cfg)
        return cfg

    def train_config(self):
        try:
            return TrainConfig.from_dict({**self.train, "seed": self.seed})
        except TypeError as exc:
            raise ConfigError(f"bad train section: {exc}") from exc

    def search_config(self):
        try:
            return SearchConfig.from_dict({**self.search, "seed": self.seed, "train": self.train_config()})
        except TypeError as exc:
            raise ConfigError(f"bad search section: {exc}") from exc

    def sweep_config(self):
        return SweepConfig.from_dict({**self.sweep, "seed": self.seed, "train": self.train_config()})

    @property
    def s_grid(self):
        return tuple(float(s) for s in self.detect["s_grid"])
