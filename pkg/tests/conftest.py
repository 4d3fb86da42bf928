import random

import numpy as np
import pytest

from hashgp.expr import ExpressionTree, Grammar, NodeKind, make_node, ptc2


def random_tree(rng: random.Random, n_variables: int = 3, max_length: int = 30, max_depth: int = 10) -> ExpressionTree:
    return ptc2(rng, Grammar(n_variables), rng.randint(1, max_length), max_depth)


def nested(tree: ExpressionTree, i: int | None = None):
    """Tree as (node, [children]) pairs, for tests that rebuild trees."""
    if i is None:
        i = len(tree) - 1
    return tree[i], [nested(tree, c) for c in tree.children(i)]


def linearize(item) -> list:
    node, kids = item
    if not kids:
        return [node]
    return make_node(node.kind, [linearize(k) for k in kids])


def shuffle_commutative(rng: random.Random, tree: ExpressionTree) -> ExpressionTree:
    def go(item):
        node, kids = item
        kids = [go(k) for k in kids]
        if node.kind.commutative:
            rng.shuffle(kids)
        return node, kids

    return ExpressionTree(linearize(go(nested(tree))))


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture
def nprng():
    return np.random.default_rng(1234)


def ulp_close(a: np.ndarray, b: np.ndarray, ulps: int = 4) -> bool:
    both_nan = np.isnan(a) & np.isnan(b)
    same = (a == b) | both_nan
    spacing = np.spacing(np.maximum(np.abs(a), np.abs(b)))
    with np.errstate(invalid="ignore"):
        close = np.abs(a - b) <= ulps * spacing
    return bool(np.all(same | close))


__all__ = ["NodeKind", "random_tree", "nested", "linearize", "shuffle_commutative", "ulp_close"]


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
