"""Hash-driven algebraic simplification.

Sums and products are flattened into operand lists; operands whose
subtrees hash to the same value are merged:

* ``additive_merge``: ``k1*S + k2*S -> (k1+k2)*S`` (a bare ``S`` counts as
  ``1*S``; bare constants in the sum are added together),
* ``multiplicative_merge``: ``S*S -> square(S)`` and constant factors are
  multiplied together,
* ``constant_fold``: a function whose arguments are all constants is
  replaced by its (finite) value.

Rules are applied bottom-up, and passes repeat until nothing changes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .expr import ExpressionTree, Node, NodeKind, evaluate, validate
from .hashing import HashMode, root_hash

ADDITIVE = "additive_merge"
MULTIPLICATIVE = "multiplicative_merge"
FOLD = "constant_fold"
ALL_RULES = frozenset({ADDITIVE, MULTIPLICATIVE, FOLD})

__all__ = ["SimplifyReport", "simplify", "is_simplified", "ADDITIVE", "MULTIPLICATIVE", "FOLD", "ALL_RULES"]

_MAX_PASSES = 100


@dataclass
class SimplifyReport:
    original_length: int
    simplified_length: int
    rules_applied: list[tuple[str, int]] = field(default_factory=list)


class _Term:
    __slots__ = ("node", "children", "pos", "_hash")

    def __init__(self, node: Node, children: list[_Term], pos: int):
        self.node = node
        self.children = children
        self.pos = pos
        self._hash = None

    @property
    def kind(self) -> NodeKind:
        return self.node.kind

    @property
    def is_constant(self) -> bool:
        return self.node.kind is NodeKind.CONSTANT

    @property
    def value(self) -> float:
        return self.node.constant_value

    def nodes(self) -> list[Node]:
        out: list[Node] = []
        self._emit(out)
        return out

    def _emit(self, out: list[Node]) -> int:
        if not self.children:
            out.append(self.node)
            return 1
        size = 1 + sum(c._emit(out) for c in self.children)
        out.append(Node(self.node.kind, len(self.children), size))
        return size

    def strict_hash(self) -> int:
        if self._hash is None:
            self._hash = root_hash(ExpressionTree(self.nodes()), HashMode.STRICT)
        return self._hash


def _const(value: float, pos: int) -> _Term:
    return _Term(Node(NodeKind.CONSTANT, 0, 1, constant_value=value), [], pos)


def _func(kind: NodeKind, children: list[_Term], pos: int) -> _Term:
    return _Term(Node(kind, len(children), 0), children, pos)


def _nest(tree: ExpressionTree) -> _Term:
    stack: list[_Term] = []
    for i, node in enumerate(tree.nodes):
        kids = []
        if node.arity:
            kids = stack[-node.arity:]
            del stack[-node.arity:]
        stack.append(_Term(node, kids, i))
    return stack[-1]


def _flatten(term: _Term, kind: NodeKind) -> list[_Term]:
    out = []
    for c in term.children:
        if c.kind is kind:
            out.extend(_flatten(c, kind))
        else:
            out.append(c)
    return out


def _combine(kind: NodeKind, operands: list[_Term], pos: int) -> _Term:
    return operands[0] if len(operands) == 1 else _func(kind, operands, pos)


class _Pass:
    def __init__(self, rules: Iterable[str]):
        self.rules = frozenset(rules)
        self.applied: list[tuple[str, int]] = []

    def visit(self, term: _Term) -> _Term:
        if not term.children:
            return term
        kids = [self.visit(c) for c in term.children]
        term = _Term(term.node, kids, term.pos)
        if FOLD in self.rules and all(c.is_constant for c in kids):
            folded = self._fold(term)
            if folded is not None:
                return folded
        if term.kind is NodeKind.ADD and ADDITIVE in self.rules:
            return self._merge_sum(term)
        if term.kind is NodeKind.MUL and MULTIPLICATIVE in self.rules:
            return self._merge_product(term)
        return term

    def _fold(self, term: _Term) -> _Term | None:
        value = float(evaluate(ExpressionTree(term.nodes()), np.zeros((1, 0)))[0])
        if not math.isfinite(value):
            return None
        self.applied.append((FOLD, term.pos))
        return _const(value, term.pos)

    def _merge_sum(self, term: _Term) -> _Term:
        operands = _flatten(term, NodeKind.ADD)
        constants: list[_Term] = []
        groups: dict[int, list[tuple[int, float | None, list[_Term]]]] = {}
        decomposed = []
        for k, op in enumerate(operands):
            if op.is_constant:
                constants.append(op)
                decomposed.append(None)
                continue
            coef, factors = _split_coefficient(op)
            key = factors[0].strict_hash() if len(factors) == 1 else _func(NodeKind.MUL, factors, op.pos).strict_hash()
            groups.setdefault(key, []).append((k, coef, factors))
            decomposed.append(key)

        out: list[_Term] = []
        changed = False
        constant_sum = None
        if len(constants) > 1:
            total = math.fsum(c.value for c in constants)
            if math.isfinite(total):
                constant_sum = _const(total, constants[0].pos)
                changed = True
        emitted: set[int] = set()
        constant_done = False
        for k, op in enumerate(operands):
            key = decomposed[k]
            if key is None:
                if constant_sum is None:
                    out.append(op)
                elif not constant_done:
                    out.append(constant_sum)
                    constant_done = True
                continue
            members = groups[key]
            if len(members) == 1:
                out.append(op)
                continue
            if key in emitted:
                continue
            coef = sum(1.0 if c is None else c for _, c, _ in members)
            if not math.isfinite(coef):
                out.append(op)
                continue
            emitted.add(key)
            changed = True
            factors = members[0][2]
            if coef == 1.0:
                merged = _combine(NodeKind.MUL, factors, op.pos)
            else:
                merged = _func(NodeKind.MUL, [_const(coef, op.pos), *factors], op.pos)
            out.append(merged)
        if not changed:
            return term
        self.applied.append((ADDITIVE, term.pos))
        return _combine(NodeKind.ADD, out, term.pos)

    def _merge_product(self, term: _Term) -> _Term:
        operands = _flatten(term, NodeKind.MUL)
        constants = [op for op in operands if op.is_constant]
        others = [op for op in operands if not op.is_constant]
        changed = False
        factor = None
        if len(constants) > 1:
            product = math.prod(c.value for c in constants)
            if math.isfinite(product):
                factor = _const(product, constants[0].pos)
                changed = True
        counts: dict[int, int] = {}
        for op in others:
            counts[op.strict_hash()] = counts.get(op.strict_hash(), 0) + 1
        if any(c > 1 for c in counts.values()):
            changed = True
        if not changed:
            return term
        out: list[_Term] = []
        seen: set[int] = set()
        factor_done = False
        for op in operands:
            if op.is_constant:
                if factor is None:
                    out.append(op)
                elif not factor_done:
                    out.append(factor)
                    factor_done = True
                continue
            key = op.strict_hash()
            if key in seen:
                continue
            seen.add(key)
            count = counts[key]
            out.extend(_func(NodeKind.SQUARE, [op], op.pos) for _ in range(count // 2))
            if count % 2:
                out.append(op)
        self.applied.append((MULTIPLICATIVE, term.pos))
        return _combine(NodeKind.MUL, out, term.pos)


def _split_coefficient(op: _Term) -> tuple[float | None, list[_Term]]:
    """Split a summand into (coefficient, factors); ``None`` means an implicit 1."""
    if op.kind is NodeKind.MUL:
        consts = [c for c in op.children if c.is_constant]
        if len(consts) == 1:
            rest = [c for c in op.children if not c.is_constant]
            return consts[0].value, rest
        if not consts:
            return None, list(op.children)
    return None, [op]


def simplify(tree: ExpressionTree, rules: Iterable[str] = ALL_RULES) -> tuple[ExpressionTree, SimplifyReport]:
    """Simplify ``tree`` to a fixpoint of the enabled rules."""
    problem = validate(tree)
    if problem is not None:
        raise ValueError(f"invalid tree: {problem}")
    rules = frozenset(rules)
    unknown = rules - ALL_RULES
    if unknown:
        raise ValueError(f"unknown rules: {sorted(unknown)}")
    report = SimplifyReport(len(tree), len(tree))
    current = tree
    for _ in range(_MAX_PASSES):
        p = _Pass(rules)
        result = p.visit(_nest(current))
        if not p.applied:
            break
        report.rules_applied.extend(p.applied)
        current = ExpressionTree(result.nodes())
    report.simplified_length = len(current)
    return current, report


def is_simplified(tree: ExpressionTree, rules: Iterable[str] = ALL_RULES) -> bool:
    p = _Pass(frozenset(rules))
    p.visit(_nest(tree))
    return not p.applied
