"""Walk through trigger design and attack-accuracy curves on synthetic data.

Run with ``python3 demos/trigger_walkthrough.py``; it takes a few seconds.
"""

import numpy as np

from biasprobe.data import SynthConfig, split, synthesize
from biasprobe.leak import clean_and_fit, sweep
from biasprobe.model import TrainConfig, accuracy, train
from biasprobe.poison import (
    BackdoorPlan,
    choose_secondary_target,
    design_attribute_trigger,
    poison_count,
)
from biasprobe.stats import chi2_scores, fit_kde, lowest_density_candidates
from biasprobe.trigger import SearchConfig, Trigger, clean_baseline, search_triggers

cfg = TrainConfig(epochs=300)

# %% A synthetic cohort: 11 cancer types, sparse count features, a gender column.
data = synthesize(SynthConfig(n_samples=2000, n_features=50, group_affinity=2.0, exclusive_classes=1, seed=4))
parts = split(data, 0.6, seed=4)
train_set, test_set = parts.train, parts.test
print(f"{data.n} samples, {data.d} features, {data.k} classes")
print("clean test accuracy:", round(accuracy(train(train_set, cfg), test_set), 3))

# %% Features that separate the classes best are the natural place to hide a trigger.
ranking = chi2_scores(train_set).ranking
top = int(ranking[0])
kde = fit_kde(train_set.features[:, top])
values = lowest_density_candidates(kde, 3)
print(f"top feature {train_set.feature_names[top]}: rare values {np.round(values, 2)}")

# %% Search single-feature triggers with a relaxed attack floor.
search = SearchConfig(max_features=3, candidates_per_feature=2, attack_floor=0.5, clean_drop_ceiling=0.02, train=cfg)
target = int(np.argmax(np.bincount(train_set.labels, minlength=data.k)))
baseline = clean_baseline(train_set, test_set, cfg)
for r in search_triggers(train_set, test_set, target, search, baseline=baseline):
    print(f"  feature {r.trigger.features[0]} = {r.trigger.value:.2f}: attack {r.attack_accuracy:.3f}, "
          f"clean {r.clean_accuracy:.3f}")

# %% The attribute trigger maps each gender to its own label; a secondary trigger rides on top.
attr = design_attribute_trigger(train_set, "gender")
secondary = choose_secondary_target(train_set, attr.encoding)
feat = next(int(j) for j in ranking if int(j) not in attr.features)
value = lowest_density_candidates(fit_kde(train_set.features[:, feat]), 1)[0]
plan = BackdoorPlan(attr, Trigger((feat,), value), secondary, 0.2)
print("encoding:", attr.encoding, "secondary target:", secondary)
print("poisoned rows at 10% of a 400-row pool:", poison_count(10, 400))

# %% Attack accuracy grows with the poisoning percentage and saturates.
curve = sweep(train_set, plan, (1, 5, 10, 20, 30, 40), 1, test_set, seed=4, train_config=cfg)
cleaned, fit = clean_and_fit(curve)
for x, y in zip(cleaned.x, cleaned.y):
    print(f"  {x:6.0f} poisoned rows -> attack {y:.3f}")
print(f"saturation fit: a={fit.a:.3f} b={fit.b:.4f} c={fit.c:.3f}")
