import sys

import numpy as np
import pytest

from regforest.model import Ensemble, make_inner, make_leaf, validate_tree


@pytest.fixture
def t1():
    """Three nodes: root splits feature 0 at 0.5 with counts 60/40,
    left leaf predicts 0.0, right leaf predicts 1.0."""
    nodes = [
        make_inner(0, 0, 0.5, 1, 2, left_count=60, right_count=40),
        make_leaf(1, 0.0),
        make_leaf(2, 1.0),
    ]
    return validate_tree(nodes, 1)


@pytest.fixture
def t1_ensemble(t1):
    return Ensemble(trees=(t1,), num_features=1)


@pytest.fixture
def t2():
    """Balanced two-level tree: root reads feature 0 with a 50/50 split,
    its left child reads feature 0 again, its right child reads feature 1.
    Expected access counts are then 1.5 for feature 0, 0.5 for feature 1."""
    nodes = [
        make_inner(0, 0, 0.5, 1, 2, left_count=50, right_count=50),
        make_inner(1, 0, 0.25, 3, 4, left_count=25, right_count=25),
        make_inner(2, 1, 0.75, 5, 6, left_count=30, right_count=20),
        make_leaf(3, 1.0),
        make_leaf(4, 2.0),
        make_leaf(5, 3.0),
        make_leaf(6, 4.0),
    ]
    return validate_tree(nodes, 2)


@pytest.fixture
def t2_ensemble(t2):
    return Ensemble(trees=(t2,), num_features=2)


@pytest.fixture
def lone_leaf():
    return validate_tree([make_leaf(0, 0.25)], 1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    # replay the acceptance verdict lines after the summary, where output
    # capture cannot hide them
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance verdicts")
        for line in lines:
            terminalreporter.write_line(line)
