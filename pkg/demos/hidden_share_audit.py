"""Audit two cloud datasets whose gender share the auditor cannot see.

The collaborator builds reference curves at known male shares; each cloud's
curve is matched against them to estimate its share. Run with
``python3 demos/hidden_share_audit.py``; it takes a few seconds. With one
repeat per percentage the estimates are coarse: expect errors of one or two
grid steps.
"""

from biasprobe.audit import run_audit
from biasprobe.config import RunConfig
from biasprobe.data import make_biased_subset, split, synthesize, trim_group

cfg = RunConfig.from_dict({
    "seed": 2,
    "synth": {"n_samples": 4200, "n_features": 50, "group_affinity": 2.0, "exclusive_classes": 1},
    "train": {"epochs": 300},
    "search": {"max_features": 2, "candidates_per_feature": 1},
    "sweep": {"repeats": 1},
    "detect": {"s_grid": [0.5, 0.6, 0.7, 0.8]},
})

# %% The collaborator keeps 5/7 of the cohort; the rest plays the cloud, balanced by gender.
parts = split(synthesize(cfg.synth_config()), 5 / 7, cfg.seed)
collab = parts.train
cloud_base = trim_group(parts.test, "gender", "male", 0.5, seed=cfg.seed)

# %% Design and reference library are computed once and reused for both clouds.
design = library = None
for s in (0.5, 0.8):
    cloud = make_biased_subset(cloud_base, "gender", "male", s, seed=cfg.seed)
    audit, design, library, report = run_audit(
        collab, cloud, cfg.replace(detect={"s_true": s}), design=design, library=library
    )
    if s == 0.5:
        print("attribute encoding:", design.plan.attribute_trigger.encoding)
        for ref_s, f in library.fits.items():
            print(f"  reference s={ref_s:.2f}: a={f.a:.3f}")
    print(f"\ncloud with hidden share {s:.2f}")
    print(report.to_text())
