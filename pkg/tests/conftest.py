import numpy as np
import pytest

from chdscreen.pipeline import FeatureCache, featurize_manifest
from chdscreen.synth import SynthSpec, generate_dataset

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_cohort(tmp_path_factory):
    """A 20-patient synthetic cohort with its feature cache."""
    root = tmp_path_factory.mktemp("cohort")
    manifest, truth = generate_dataset(SynthSpec(n_patients=20, seed=7), root / "data")
    featurize_manifest(manifest, root / "features")
    return manifest, FeatureCache(root / "features"), root
