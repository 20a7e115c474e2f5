# tests/conftest.py
import os

import numpy as np
import pytest

from fishergrad.hypergeom import UrnSpec
from fishergrad.reparam import clear_caches


@pytest.fixture(autouse=True)
def isolated_env(monkeypatch, tmp_path):
    """No FGRAD_* leaks in from the developer's shell or .env; outputs go to tmp."""
    for key in list(os.environ):
        if key.startswith("FGRAD_"):
            monkeypatch.delenv(key, raising=False)
    monkeypatch.setenv("FGRAD_OUT_DIR", str(tmp_path / "runs"))
    monkeypatch.setenv("FGRAD_DB", str(tmp_path / "runs" / "ledger.db"))
    yield
    clear_caches()


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(12345))


@pytest.fixture
def small_urn():
    return UrnSpec.central((3, 5, 4), 5)


@pytest.fixture
def small_weighted_urn():
    return UrnSpec.from_weights((3, 5, 4), 5, (1.0, 2.0, 4.0))


@pytest.fixture
def reference_urn():
    return UrnSpec.from_weights((200, 200, 200), 180, (1.0, 5.0, 1.0))


@pytest.fixture
def two_class_urn():
    # x_1 law: [1/13, 8/13, 4/13]
    return UrnSpec.from_weights((2, 2), 2, (2.0, 1.0))


def random_urn(gen: np.random.Generator, classes=(2, 3, 4), max_m=8, low=0.2, high=5.0) -> UrnSpec:
    c = int(gen.choice(classes))
    m = tuple(int(x) for x in gen.integers(1, max_m + 1, size=c))
    n = int(gen.integers(0, sum(m) + 1))
    w = tuple(float(x) for x in gen.uniform(low, high, size=c))
    return UrnSpec.from_weights(m, n, w)
