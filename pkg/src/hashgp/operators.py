"""Subtree crossover and the four mutation operators."""

from __future__ import annotations

from dataclasses import dataclass

from .expr import ExpressionTree, Grammar, Node, NodeKind, TreeConstraintError, max_size_for_depth, ptc2

__all__ = ["Limits", "MUTATIONS", "subtree_crossover", "mutate"]

MUTATIONS = ("remove_branch", "replace_branch", "change_node_type", "one_point")


@dataclass(frozen=True)
class Limits:
    max_length: int = 50
    max_depth: int = 12

    def admits(self, tree: ExpressionTree) -> bool:
        return len(tree) <= self.max_length and tree.depth() <= self.max_depth


def subtree_crossover(
    rng,
    parent_a: ExpressionTree,
    parent_b: ExpressionTree,
    max_length: int = 50,
    max_depth: int = 12,
    attempts: int = 10,
    internal_probability: float = 0.9,
) -> ExpressionTree:
    """Graft a random subtree of ``parent_b`` onto a random point of ``parent_a``.

    Crossover points are function nodes with ``internal_probability`` (when
    the tree has any), leaves otherwise. Retries up to ``attempts`` times to
    find a child within the limits and falls back to ``parent_a``.
    """
    depths = parent_a.node_depths()
    for _ in range(attempts):
        i = _crossover_point(rng, parent_a, internal_probability)
        j = _crossover_point(rng, parent_b, internal_probability)
        cut = parent_a[i].length
        graft = parent_b[j].length
        if len(parent_a) - cut + graft > max_length:
            continue
        branch = parent_b.subtree(j)
        if depths[i] - 1 + ExpressionTree(branch).depth() > max_depth:
            continue
        return parent_a.replace_subtree(i, branch)
    return parent_a


def _crossover_point(rng, tree: ExpressionTree, internal_probability: float) -> int:
    if len(tree) > 1 and rng.random() < internal_probability:
        internal = [k for k, n in enumerate(tree.nodes) if n.arity]
        return internal[rng.randrange(len(internal))]
    leaves = [k for k, n in enumerate(tree.nodes) if not n.arity]
    return leaves[rng.randrange(len(leaves))]


def _remove_branch(rng, tree, grammar, limits):
    if len(tree) == 1:
        return ExpressionTree([grammar.random_terminal(rng)])
    i = rng.randrange(len(tree) - 1)
    return tree.replace_subtree(i, [grammar.random_terminal(rng)])


def _replace_branch(rng, tree, grammar, limits):
    i = rng.randrange(len(tree))
    depth_here = tree.node_depths()[i]
    room = limits.max_length - (len(tree) - tree[i].length)
    depth_room = limits.max_depth - depth_here + 1
    slack = max(grammar.max_arity - 1, 0)
    upper = min(room - slack, max_size_for_depth(grammar.max_arity, depth_room))
    if upper < 1:
        return tree.replace_subtree(i, [grammar.random_terminal(rng)])
    try:
        branch = ptc2(rng, grammar, rng.randint(1, upper), depth_room)
    except TreeConstraintError:
        branch = ExpressionTree([grammar.random_terminal(rng)])
    return tree.replace_subtree(i, branch.nodes)


def _change_node_type(rng, tree, grammar, limits):
    i = rng.randrange(len(tree))
    node = tree[i]
    if node.arity == 0:
        return tree.replace_subtree(i, [grammar.random_terminal(rng)])
    if node.arity == 2 or node.arity == 1:
        options = [k for k in grammar.functions if k.arity == node.arity and k is not node.kind]
    else:
        # n-ary sums/products can only swap with each other
        options = [k for k in (NodeKind.ADD, NodeKind.MUL) if k is not node.kind]
    if not options:
        return tree
    kind = options[rng.randrange(len(options))]
    nodes = list(tree.nodes)
    nodes[i] = node._replace(kind=kind)
    return ExpressionTree(nodes)


def _one_point(rng, tree, grammar, limits):
    leaves = [k for k, n in enumerate(tree.nodes) if n.arity == 0]
    i = leaves[rng.randrange(len(leaves))]
    node = tree[i]
    if node.kind is NodeKind.CONSTANT:
        new = node._replace(constant_value=node.constant_value + rng.gauss(0.0, 1.0))
    elif grammar.n_variables > 1:
        k = rng.randrange(grammar.n_variables - 1)
        new = node._replace(variable_index=k if k < node.variable_index else k + 1)
    else:
        new = node
    nodes = list(tree.nodes)
    nodes[i] = new
    return ExpressionTree(nodes)


_OPERATORS = {
    "remove_branch": _remove_branch,
    "replace_branch": _replace_branch,
    "change_node_type": _change_node_type,
    "one_point": _one_point,
}


def mutate(
    rng,
    tree: ExpressionTree,
    grammar: Grammar,
    limits: Limits = Limits(),
    weights: dict[str, float] | None = None,
    operator: str | None = None,
) -> ExpressionTree:
    """Apply one mutation operator, chosen by ``weights`` (uniform by default)."""
    if operator is None:
        if weights is None:
            operator = MUTATIONS[rng.randrange(len(MUTATIONS))]
        else:
            names = [m for m in MUTATIONS if weights.get(m, 0) > 0]
            operator = rng.choices(names, [weights[m] for m in names])[0]
    child = _OPERATORS[operator](rng, tree, grammar, limits)
    return child if limits.admits(child) else tree
