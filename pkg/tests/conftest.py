import sys

import numpy as np
import pytest

from leaveout.design import Panel, build_design
from leaveout.network import MobilityGraph, prune


def random_akm_panel(seed=0, firms=6, workers=40, periods=2, move_prob=0.6, noise=0.5):
    """Small two-way panel; each worker may switch firm once."""
    rng = np.random.default_rng(seed)
    psi = rng.normal(size=firms)
    alpha = rng.normal(size=workers)
    rows = []
    for i in range(workers):
        j0 = int(rng.integers(firms))
        j1 = (j0 + 1 + int(rng.integers(firms - 1))) % firms if rng.uniform() < move_prob else j0
        switch = int(rng.integers(1, periods)) if periods > 1 else 1
        for t in range(periods):
            j = j0 if t < switch else j1
            rows.append((f"w{i}", f"f{j}", t, alpha[i] + psi[j] + noise * rng.normal()))
    w, f, t, y = zip(*rows)
    return Panel(np.array(w, dtype=object), np.array(f, dtype=object), np.array(t), np.array(y))


def pruned_panel(panel, level="loo"):
    graph, _ = prune(MobilityGraph.from_panel(panel), level)
    keep = set(graph.movers) | set(graph.stayers)
    firms = set(graph.firms)
    mask = np.array([w in keep and j in firms for w, j in zip(panel.worker, panel.firm)])
    return panel.subset(mask), graph


def random_dense_design(rng, n=None, k=None, density=None):
    """Full-column-rank regressor matrix with a mix of dummies and dense columns."""
    n = n or int(rng.integers(30, 200))
    k = k or int(rng.integers(3, max(4, n // 4)))
    density = density if density is not None else rng.uniform(0.05, 1.0)
    while True:
        X = rng.normal(size=(n, k)) * (rng.uniform(size=(n, k)) < density)
        X[np.arange(n), rng.integers(0, k, n)] += 1.0
        if np.linalg.matrix_rank(X) == k and np.max(np.sum((X @ np.linalg.pinv(X)) * np.eye(n), 1)) < 0.99:
            return X


@pytest.fixture
def akm_panel():
    panel, _ = pruned_panel(random_akm_panel(3, firms=6, workers=40, periods=4))
    return panel


@pytest.fixture
def akm_design(akm_panel):
    return build_design(akm_panel, "levels")


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
