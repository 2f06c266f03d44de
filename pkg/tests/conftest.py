import numpy as np
import pytest

from biasprobe.data import Dataset, SynthConfig, synthesize


def make_dataset(X, y, k=None, attrs=None, groups=None):
    """Small hand-built dataset; ``attrs`` maps attribute name to group indices."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    k = int(y.max()) + 1 if k is None else k
    attrs = attrs or {}
    groups = groups or {a: tuple(f"g{i}" for i in range(int(np.max(v)) + 1)) for a, v in attrs.items()}
    return Dataset(
        sample_ids=[f"s{i}" for i in range(len(y))],
        feature_names=[f"f{j}" for j in range(X.shape[1])],
        features=X,
        labels=y,
        class_names=[f"c{c}" for c in range(max(k, 2))],
        attributes=attrs,
        group_names=groups,
    )


@pytest.fixture(scope="session")
def small_synth():
    """A learnable 600 x 30, 5-class synthetic set with a gender attribute."""
    return synthesize(SynthConfig(n_samples=600, n_features=30, n_classes=5, group_affinity=2.0, seed=11))


@pytest.fixture(scope="session")
def medium_synth():
    return synthesize(SynthConfig(n_samples=1500, n_features=40, n_classes=6, group_affinity=2.0, seed=5))


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance verdicts, one line per criterion, after the run."""
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "VERDICTS", {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
