"""Expression trees stored as postorder arrays of typed nodes.

Every subtree occupies a contiguous slice of the node array ending at its
root, so a node's children can be found by walking backwards using the
stored subtree lengths: the last child sits at ``i - 1``, the one before it
at ``j - length(j)`` and so on.
"""

from __future__ import annotations

import bisect
import enum
import itertools
import math
import re
from dataclasses import dataclass, field
from functools import reduce
from typing import Iterable, NamedTuple, Sequence

import numpy as np

__all__ = [
    "NodeKind",
    "Node",
    "ExpressionTree",
    "Grammar",
    "ParseError",
    "TreeConstraintError",
    "leaf",
    "variable",
    "constant",
    "make_node",
    "validate",
    "evaluate",
    "ptc2",
    "to_infix",
    "node_label",
    "parse_infix",
    "subtree_bounds",
    "depth",
]


class NodeKind(enum.IntEnum):
    ADD = 1
    SUB = 2
    MUL = 3
    DIV = 4
    EXP = 5
    LOG = 6
    SIN = 7
    COS = 8
    SQUARE = 9
    VARIABLE = 10
    CONSTANT = 11

    @property
    def arity(self) -> int:
        """Default (minimum) number of children."""
        return _ARITY[self]

    @property
    def commutative(self) -> bool:
        return self in (NodeKind.ADD, NodeKind.MUL)

    @property
    def variadic(self) -> bool:
        # Add/Mul accept two or more operands (n-ary sums and products).
        return self in (NodeKind.ADD, NodeKind.MUL)

    @property
    def is_terminal(self) -> bool:
        return self in (NodeKind.VARIABLE, NodeKind.CONSTANT)


_ARITY = {
    NodeKind.ADD: 2,
    NodeKind.SUB: 2,
    NodeKind.MUL: 2,
    NodeKind.DIV: 2,
    NodeKind.EXP: 1,
    NodeKind.LOG: 1,
    NodeKind.SIN: 1,
    NodeKind.COS: 1,
    NodeKind.SQUARE: 1,
    NodeKind.VARIABLE: 0,
    NodeKind.CONSTANT: 0,
}

FUNCTIONS = tuple(k for k in NodeKind if not k.is_terminal)

_UNARY_NAMES = {
    "exp": NodeKind.EXP,
    "log": NodeKind.LOG,
    "sin": NodeKind.SIN,
    "cos": NodeKind.COS,
    "square": NodeKind.SQUARE,
}
_NAME_OF = {v: k for k, v in _UNARY_NAMES.items()}
_SYMBOL_OF = {
    NodeKind.ADD: "+",
    NodeKind.SUB: "-",
    NodeKind.MUL: "*",
    NodeKind.DIV: "/",
}


class Node(NamedTuple):
    kind: NodeKind
    arity: int
    length: int
    variable_index: int = -1
    constant_value: float = 0.0


class TreeConstraintError(ValueError):
    """Raised when size/depth constraints cannot be satisfied."""


class ParseError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at offset {position}")
        self.position = position


def variable(index: int) -> list[Node]:
    return [Node(NodeKind.VARIABLE, 0, 1, variable_index=index)]


def constant(value: float) -> list[Node]:
    return [Node(NodeKind.CONSTANT, 0, 1, constant_value=float(value))]


def leaf(node: Node) -> list[Node]:
    return [node]


def make_node(kind: NodeKind, children: Sequence[Sequence[Node]]) -> list[Node]:
    """Build the postorder segment for ``kind`` applied to ``children``."""
    out: list[Node] = []
    for child in children:
        out.extend(child)
    out.append(Node(kind, len(children), len(out) + 1))
    return out


@dataclass(frozen=True)
class ExpressionTree:
    """Immutable postorder-linearized expression tree."""

    nodes: tuple[Node, ...]

    def __init__(self, nodes: Iterable[Node]):
        object.__setattr__(self, "nodes", tuple(nodes))

    def __len__(self) -> int:
        return len(self.nodes)

    def __getitem__(self, i: int) -> Node:
        return self.nodes[i]

    @property
    def root(self) -> Node:
        return self.nodes[-1]

    def children(self, i: int) -> list[int]:
        """Indices of the children of node ``i`` in left-to-right order."""
        return child_indices(self.nodes, i)

    def subtree(self, i: int) -> list[Node]:
        start, end = subtree_bounds(self, i)
        return list(self.nodes[start:end + 1])

    def replace_subtree(self, i: int, segment: Sequence[Node]) -> ExpressionTree:
        """Return a copy with the subtree rooted at ``i`` swapped for ``segment``."""
        start, end = subtree_bounds(self, i)
        delta = len(segment) - (end - start + 1)
        tail = []
        for k in range(end + 1, len(self.nodes)):
            node = self.nodes[k]
            if delta and k - node.length + 1 <= start:
                node = node._replace(length=node.length + delta)
            tail.append(node)
        return ExpressionTree(itertools.chain(self.nodes[:start], segment, tail))

    def depth(self) -> int:
        return depth(self)

    def node_depths(self) -> list[int]:
        """Depth of every node, the root being at depth 1."""
        n = len(self.nodes)
        depths = [0] * n
        depths[n - 1] = 1
        for i in range(n - 1, -1, -1):
            node = self.nodes[i]
            if node.arity:
                d = depths[i] + 1
                j = i - 1
                for _ in range(node.arity):
                    depths[j] = d
                    j -= self.nodes[j].length
        return depths

    def evaluate(self, data) -> np.ndarray:
        return evaluate(self, data)

    def to_infix(self, names: Sequence[str] | None = None) -> str:
        return to_infix(self, names)

    def __str__(self) -> str:
        return to_infix(self)


def child_indices(nodes: Sequence[Node], i: int) -> list[int]:
    idx = []
    j = i - 1
    for _ in range(nodes[i].arity):
        idx.append(j)
        j -= nodes[j].length
    idx.reverse()
    return idx


def subtree_bounds(tree: ExpressionTree, node_index: int) -> tuple[int, int]:
    if not 0 <= node_index < len(tree.nodes):
        raise IndexError(f"node index {node_index} out of range for tree of {len(tree.nodes)} nodes")
    return node_index - tree.nodes[node_index].length + 1, node_index


def depth(tree: ExpressionTree) -> int:
    stack: list[int] = []
    for node in tree.nodes:
        if node.arity:
            d = max(stack[-node.arity:])
            del stack[-node.arity:]
            stack.append(d + 1)
        else:
            stack.append(1)
    return stack[-1]


def validate(tree: ExpressionTree) -> str | None:
    """Check structural invariants in one pass.

    Returns ``None`` if the tree is well formed, otherwise a message
    describing the first violation and the index of the offending node.
    """
    nodes = tree.nodes
    if not nodes:
        return "empty tree"
    stack: list[int] = []
    for i, node in enumerate(nodes):
        kind = node.kind
        if not isinstance(kind, NodeKind):
            return f"node {i}: unknown kind {kind!r}"
        if kind.variadic:
            if node.arity < 2:
                return f"node {i}: {kind.name} needs at least 2 children, has arity {node.arity}"
        elif node.arity != kind.arity:
            return f"node {i}: {kind.name} must have arity {kind.arity}, has {node.arity}"
        if kind is NodeKind.VARIABLE and node.variable_index < 0:
            return f"node {i}: negative variable index {node.variable_index}"
        if len(stack) < node.arity:
            plural = "child" if len(stack) == 1 else "children"
            return f"node {i}: arity {node.arity} but {len(stack)} {plural}"
        size = 1
        if node.arity:
            size += sum(stack[-node.arity:])
            del stack[-node.arity:]
        if node.length != size:
            return f"node {i}: length {node.length} but subtree has {size} nodes"
        stack.append(size)
    if len(stack) != 1:
        return f"node {len(nodes) - 1}: {len(stack)} disconnected subtrees"
    return None


def evaluate(tree: ExpressionTree, data) -> np.ndarray:
    """Evaluate ``tree`` on every row of ``data``.

    Arithmetic is unprotected: division by zero, logarithms of non-positive
    values and overflow produce inf/nan which propagate to the output.
    """
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D data matrix, got shape {X.shape}")
    n_rows, n_cols = X.shape
    stack: list[np.ndarray] = []
    with np.errstate(all="ignore"):
        for node in tree.nodes:
            kind = node.kind
            if kind is NodeKind.CONSTANT:
                stack.append(np.full(n_rows, node.constant_value))
            elif kind is NodeKind.VARIABLE:
                if node.variable_index >= n_cols:
                    raise IndexError(
                        f"variable index {node.variable_index} out of bounds for {n_cols} columns"
                    )
                stack.append(X[:, node.variable_index])
            elif node.arity == 1:
                stack.append(_UNARY_OPS[kind](stack.pop()))
            else:
                args = stack[-node.arity:]
                del stack[-node.arity:]
                stack.append(reduce(_BINARY_OPS[kind], args))
    out = stack[-1]
    return out if out.flags.owndata else out.copy()


_UNARY_OPS = {
    NodeKind.EXP: np.exp,
    NodeKind.LOG: np.log,
    NodeKind.SIN: np.sin,
    NodeKind.COS: np.cos,
    NodeKind.SQUARE: np.square,
}
_BINARY_OPS = {
    NodeKind.ADD: np.add,
    NodeKind.SUB: np.subtract,
    NodeKind.MUL: np.multiply,
    NodeKind.DIV: np.divide,
}


@dataclass
class Grammar:
    """Symbols available to tree creation and mutation, with relative frequencies."""

    n_variables: int
    functions: dict[NodeKind, float] = field(
        default_factory=lambda: {k: 1.0 for k in FUNCTIONS}
    )
    variable_weight: float = 1.0
    constant_weight: float = 1.0
    constant_range: tuple[float, float] = (-5.0, 5.0)

    def __post_init__(self):
        self.functions = {NodeKind(k): float(w) for k, w in self.functions.items() if w > 0}
        if self.n_variables < 0:
            raise ValueError("n_variables must be non-negative")
        self._function_kinds = list(self.functions)
        self._function_cum = list(itertools.accumulate(self.functions.values()))
        if self.n_variables == 0:
            self.variable_weight = 0.0
        if self.variable_weight + self.constant_weight <= 0:
            raise ValueError("grammar has no terminal symbols")

    @property
    def max_arity(self) -> int:
        return max((k.arity for k in self.functions), default=0)

    def random_function(self, rng, arity: int | None = None) -> NodeKind:
        if arity is None:
            x = rng.random() * self._function_cum[-1]
            return self._function_kinds[bisect.bisect_right(self._function_cum, x)]
        kinds = [k for k in self._function_kinds if k.arity == arity]
        weights = [self.functions[k] for k in kinds]
        return rng.choices(kinds, weights)[0]

    def random_terminal(self, rng) -> Node:
        total = self.variable_weight + self.constant_weight
        if rng.random() * total < self.variable_weight:
            return Node(NodeKind.VARIABLE, 0, 1, variable_index=rng.randrange(self.n_variables))
        lo, hi = self.constant_range
        return Node(NodeKind.CONSTANT, 0, 1, constant_value=rng.uniform(lo, hi))


def max_size_for_depth(max_arity: int, max_depth: int) -> int:
    if max_depth < 1:
        return 0
    if max_arity <= 1:
        return max_depth if max_arity == 1 else 1
    return (max_arity ** max_depth - 1) // (max_arity - 1)


def ptc2(rng, grammar: Grammar, target_length: int, max_depth: int, attempts: int = 100) -> ExpressionTree:
    """Probabilistic tree creation (PTC2).

    Grows a tree from a random function root by repeatedly expanding a
    random open argument slot with a function symbol, until the number of
    placed functions plus open slots reaches ``target_length``; the open
    slots are then filled with terminals. The result has between
    ``target_length`` and ``target_length + max_arity - 1`` nodes.
    """
    if target_length < 1:
        raise TreeConstraintError("target_length must be at least 1")
    if max_depth < 1:
        raise TreeConstraintError("max_depth must be at least 1")
    if target_length == 1:
        return ExpressionTree([grammar.random_terminal(rng)])
    if not grammar.functions:
        raise TreeConstraintError("grammar has no function symbols")
    if target_length > max_size_for_depth(grammar.max_arity, max_depth):
        raise TreeConstraintError(
            f"cannot build {target_length} nodes within depth {max_depth}"
        )
    for _ in range(attempts):
        tree = _ptc2_once(rng, grammar, target_length, max_depth)
        if tree is not None:
            return tree
    raise TreeConstraintError(
        f"failed to build a tree of length {target_length} within depth {max_depth}"
    )


def _ptc2_once(rng, grammar, target_length, max_depth):
    # Each slot is [kind or terminal node, children, depth].
    root = [grammar.random_function(rng), [], 1]
    open_slots = []
    for _ in range(root[0].arity):
        child = [None, [], 2]
        root[1].append(child)
        open_slots.append(child)
    n_functions = 1
    while open_slots and n_functions + len(open_slots) < target_length:
        expandable = [k for k, s in enumerate(open_slots) if s[2] < max_depth]
        if not expandable:
            return None
        slot = open_slots.pop(expandable[rng.randrange(len(expandable))])
        slot[0] = grammar.random_function(rng)
        n_functions += 1
        for _ in range(slot[0].arity):
            child = [None, [], slot[2] + 1]
            slot[1].append(child)
            open_slots.append(child)
    for slot in open_slots:
        slot[0] = grammar.random_terminal(rng)
    return ExpressionTree(_linearize(root))


def _linearize(root) -> list[Node]:
    out: list[Node] = []
    # iterative postorder: (slot, visited)
    stack = [(root, False)]
    sizes: list[int] = []
    while stack:
        slot, visited = stack.pop()
        sym = slot[0]
        if isinstance(sym, Node):
            out.append(sym)
            sizes.append(1)
        elif visited:
            k = len(slot[1])
            size = 1 + sum(sizes[-k:])
            del sizes[-k:]
            out.append(Node(sym, k, size))
            sizes.append(size)
        else:
            stack.append((slot, True))
            for child in reversed(slot[1]):
                stack.append((child, False))
    return out


# --- infix text -----------------------------------------------------------

def _default_name(i: int) -> str:
    return f"x{i}"


def node_label(node: Node, names: Sequence[str] | None = None) -> str:
    """Short printable label of a single node, e.g. ``+``, ``sin``, ``x0``, ``2.5``."""
    if node.kind is NodeKind.CONSTANT:
        return repr(node.constant_value)
    if node.kind is NodeKind.VARIABLE:
        i = node.variable_index
        return names[i] if names is not None else _default_name(i)
    if node.arity == 1:
        return _NAME_OF[node.kind]
    return _SYMBOL_OF[node.kind]


def to_infix(tree: ExpressionTree, names: Sequence[str] | None = None) -> str:
    """Fully parenthesized infix text; constants use ``repr`` (round-trip exact)."""
    stack: list[str] = []
    for node in tree.nodes:
        kind = node.kind
        if kind is NodeKind.CONSTANT:
            stack.append(repr(node.constant_value))
        elif kind is NodeKind.VARIABLE:
            i = node.variable_index
            stack.append(names[i] if names is not None else _default_name(i))
        elif node.arity == 1:
            stack.append(f"{_NAME_OF[kind]}({stack.pop()})")
        else:
            args = stack[-node.arity:]
            del stack[-node.arity:]
            stack.append("(" + f" {_SYMBOL_OF[kind]} ".join(args) + ")")
    return stack[-1]


_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/(),]))"
)


class _Parser:
    def __init__(self, text: str, names: Sequence[str] | None):
        self.text = text
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        while True:
            while pos < len(text) and text[pos].isspace():
                pos += 1
            if pos >= len(text):
                break
            m = _TOKEN.match(text, pos)
            if not m or m.end() == pos:
                raise ParseError(f"unexpected character {text[pos]!r}", pos)
            kind = m.lastgroup
            start = m.start(kind)
            self.tokens.append((kind, m.group(kind), start))
            pos = m.end()
        self.i = 0
        self.names = {n: k for k, n in enumerate(names)} if names is not None else None

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else ("end", "", len(self.text))

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect(self, value):
        kind, val, pos = self.peek()
        if val != value or kind == "end":
            found = "end of input" if kind == "end" else repr(val)
            raise ParseError(f"expected {value!r}, found {found}", pos)
        self.i += 1

    def parse(self) -> list[Node]:
        seg = self.expression()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected {val!r}", pos)
        return seg

    def _chain(self, operand, plus: str, minus: str, plus_kind, minus_kind):
        operands = [operand()]
        while True:
            _, val, _ = self.peek()
            if val == plus:
                self.take()
                operands.append(operand())
            elif val == minus:
                self.take()
                left = operands[0] if len(operands) == 1 else make_node(plus_kind, operands)
                operands = [make_node(minus_kind, [left, operand()])]
            else:
                break
        return operands[0] if len(operands) == 1 else make_node(plus_kind, operands)

    def expression(self):
        return self._chain(self.term, "+", "-", NodeKind.ADD, NodeKind.SUB)

    def term(self):
        return self._chain(self.unary, "*", "/", NodeKind.MUL, NodeKind.DIV)

    def unary(self):
        kind, val, pos = self.peek()
        if val == "-" and kind == "op":
            self.take()
            nkind, nval, _ = self.peek()
            if nkind == "num":
                self.take()
                return constant(-float(nval))
            return make_node(NodeKind.MUL, [constant(-1.0), self.unary()])
        return self.atom()

    def atom(self):
        kind, val, pos = self.take()
        if kind == "num":
            return constant(float(val))
        if kind == "name":
            if val in ("inf", "nan"):
                return constant(float(val))
            if val in _UNARY_NAMES:
                self.expect("(")
                arg = self.expression()
                self.expect(")")
                return make_node(_UNARY_NAMES[val], [arg])
            return variable(self._variable_index(val, pos))
        if val == "(":
            seg = self.expression()
            self.expect(")")
            return seg
        found = "end of input" if kind == "end" else repr(val)
        raise ParseError(f"unexpected {found}", pos)

    def _variable_index(self, name, pos):
        if self.names is not None:
            if name not in self.names:
                raise ParseError(f"unknown variable {name!r}", pos)
            return self.names[name]
        m = re.fullmatch(r"x(\d+)", name)
        if not m:
            raise ParseError(f"unknown variable {name!r}", pos)
        return int(m.group(1))


def parse_infix(text: str, names: Sequence[str] | None = None) -> ExpressionTree:
    """Parse infix text into a tree.

    ``a + b + c`` (no inner parentheses) becomes one n-ary Add node, while
    ``(a + b) + c`` keeps the nesting, so ``to_infix`` output round-trips
    node for node. Without ``names`` variables must be spelled ``x0, x1, ...``.
    """
    return ExpressionTree(_Parser(text, names).parse())


def is_finite_constant(node: Node) -> bool:
    return node.kind is NodeKind.CONSTANT and math.isfinite(node.constant_value)
