import json
from pathlib import Path

import numpy as np
import pytest

from envpoison.harness import small_test_mdp
from envpoison.mdp import TabularMdp

FROZEN = json.loads((Path(__file__).parent / "data" / "frozen_oracles.json").read_text())


@pytest.fixture
def frozen():
    return FROZEN


@pytest.fixture
def small_mdp():
    return small_test_mdp()


@pytest.fixture
def three_state_mdp():
    # state 0 / action 0 has a two-element reachable set, the rest are full
    rng = np.random.default_rng(3)
    P = rng.random((3, 2, 3))
    P[0, 0, 2] = 0.0
    P /= P.sum(axis=-1, keepdims=True)
    return TabularMdp(P, rng.normal(size=(3, 2)), 0.9)


def tv_distance(counts, probs):
    freq = np.asarray(counts, dtype=float) / np.sum(counts)
    return 0.5 * float(np.abs(freq - np.asarray(probs)).sum())


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
