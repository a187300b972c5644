import os
from pathlib import Path

import numpy as np
import pytest

from phnsw import PHNSWIndex, make_synthetic
from phnsw.dataio import read_fvecs

ACCEPTANCE_LINES = []


def record_criterion(number, name, passed, detail=""):
    line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {name}"
    if detail:
        line += f": {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def _desk_data():
    # SIFT subset when PHNSW_SIFT_DIR holds sift_base.fvecs / sift_query.fvecs.
    root = os.environ.get("PHNSW_SIFT_DIR")
    if root and (Path(root) / "sift_base.fvecs").exists():
        return (
            "sift10k",
            read_fvecs(Path(root) / "sift_base.fvecs", 10_000),
            read_fvecs(Path(root) / "sift_query.fvecs", 100),
        )
    base, queries = make_synthetic(10_000, 100, 128, seed=0)
    return "synthetic", base, queries


@pytest.fixture(scope="session")
def desk():
    """Desk-scale dataset and a fitted index with the default parameters."""
    name, base, queries = _desk_data()
    index = PHNSWIndex(n_components=15, M=16, ef_construction=200, ef=10, random_state=0).fit(base)
    return {"name": name, "base": base, "queries": queries, "index": index}


@pytest.fixture(scope="session")
def desk_truth(desk):
    from phnsw import ground_truth

    return ground_truth(desk["base"], desk["queries"], 10)


@pytest.fixture(scope="session")
def small():
    """2k x 32 clustered data with a fitted index; cheap enough for many tests."""
    base, queries = make_synthetic(2_000, 30, 32, n_clusters=8, seed=3)
    index = PHNSWIndex(n_components=8, M=8, ef_construction=64, ef=10, k0=16, k1=8, k_rest=3).fit(base)
    return {"base": base, "queries": queries, "index": index}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
