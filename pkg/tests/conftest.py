import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from scnfilt.harness import ExperimentConfig, monte_carlo


@pytest.fixture(scope="session")
def nominal_batch():
    """Full 100-run nominal Monte-Carlo batch plus its wall time, shared
    across test modules."""
    t0 = time.monotonic()
    report = monte_carlo(ExperimentConfig(runs=100, seed=0).validate())
    return report, time.monotonic() - t0


@pytest.fixture(scope="session")
def nominal_report(nominal_batch):
    return nominal_batch[0]


@pytest.fixture(scope="session")
def uncertain_report():
    """100-run batch with the 10% dynamics perturbation on the estimator side."""
    return monte_carlo(ExperimentConfig(runs=100, seed=0, uncertainty=0.1).validate())
