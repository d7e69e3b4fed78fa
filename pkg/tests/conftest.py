import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from weightrelay.data import Dataset
from weightrelay.nn import mlp

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

DATA_DIR = Path(__file__).parent / "data"


def data_path(name):
    """A dataset file from $WEIGHTRELAY_DATA_DIR or the vendored tests/data."""
    extra = os.environ.get("WEIGHTRELAY_DATA_DIR")
    if extra and (Path(extra) / name).exists():
        return Path(extra) / name
    return DATA_DIR / name


def blobs(n, d, k, seed):
    """Gaussian clusters, one per class; easy but not trivially separable."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(0, 2.0, size=(k, d))
    y = rng.integers(0, k, n)
    X = centers[y] + rng.normal(size=(n, d))
    return Dataset(X, y, max(k, 2))


@pytest.fixture
def small_spec():
    return mlp([4, 6, 3])


@pytest.fixture
def small_shards():
    return [blobs(n, 4, 3, seed) for seed, n in enumerate((23, 31, 17))]


@pytest.fixture
def pima_path():
    return data_path("pima-indians-diabetes.csv")


# criterion number -> "PASS ..." / "FAIL ..." line, filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
