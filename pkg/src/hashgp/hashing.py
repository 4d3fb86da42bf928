"""Bottom-up tree hashing with canonical ordering of commutative children.

Each node receives a 64-bit hash: leaves hash their own data block, and
function nodes hash the concatenation of their children's hashes (sorted
for commutative symbols) followed by their own initial hash. Isomorphic
subtrees therefore get equal hash values, and the hash sequence of a tree
is aligned with its (canonically reordered) postorder array.
"""

from __future__ import annotations

import enum
import struct
from functools import lru_cache

import numpy as np
import xxhash

from .expr import ExpressionTree, Node, NodeKind, validate

__all__ = ["HashMode", "DEFAULT_SEED", "hash_tree", "root_hash", "initial_hash", "combine"]

DEFAULT_SEED = 0x5EED_0F_7EE5


class HashMode(enum.Enum):
    STRICT = "strict"
    STRUCTURAL = "structural"


def combine(values, seed: int = DEFAULT_SEED) -> int:
    """Hash a sequence of 64-bit words (little-endian byte concatenation)."""
    return xxhash.xxh3_64_intdigest(struct.pack(f"<{len(values)}Q", *values), seed)


@lru_cache(maxsize=65536)
def _initial(kind: NodeKind, payload: bytes, seed: int) -> int:
    return xxhash.xxh3_64_intdigest(bytes((int(kind),)) + payload, seed)


def initial_hash(node: Node, mode: HashMode = HashMode.STRICT, seed: int = DEFAULT_SEED) -> int:
    kind = node.kind
    if kind is NodeKind.VARIABLE:
        payload = struct.pack("<q", node.variable_index)
    elif kind is NodeKind.CONSTANT and mode is HashMode.STRICT:
        payload = struct.pack("<d", node.constant_value)
    else:
        payload = b""
    return _initial(kind, payload, seed)


def hash_tree(
    tree: ExpressionTree,
    mode: HashMode = HashMode.STRICT,
    seed: int = DEFAULT_SEED,
) -> tuple[ExpressionTree, np.ndarray]:
    """Hash every node of ``tree``.

    Returns the canonical tree (children of Add/Mul reordered by ascending
    hash, ties kept in their original order) together with the ``uint64``
    hash of every node, aligned with the canonical postorder array. The
    input tree is not modified.
    """
    problem = validate(tree)
    if problem is not None:
        raise ValueError(f"invalid tree: {problem}")
    nodes = list(tree.nodes)
    hashes = [0] * len(nodes)
    for i, node in enumerate(nodes):
        h0 = initial_hash(node, mode, seed)
        arity = node.arity
        if not arity:
            hashes[i] = h0
            continue
        # child roots, left to right
        idx = []
        j = i - 1
        for _ in range(arity):
            idx.append(j)
            j -= nodes[j].length
        idx.reverse()
        child_hashes = [hashes[c] for c in idx]
        if node.kind.commutative:
            order = sorted(range(arity), key=child_hashes.__getitem__)
            if order != list(range(arity)):
                if node.length - 1 == arity:
                    # all children are leaves: permute in place
                    leaves = [nodes[c] for c in idx]
                    for pos, o in zip(idx, order):
                        nodes[pos] = leaves[o]
                        hashes[pos] = child_hashes[o]
                else:
                    start = i - node.length + 1
                    node_buf: list[Node] = []
                    hash_buf: list[int] = []
                    for o in order:
                        c = idx[o]
                        lo = c - nodes[c].length + 1
                        node_buf.extend(nodes[lo:c + 1])
                        hash_buf.extend(hashes[lo:c + 1])
                    nodes[start:i] = node_buf
                    hashes[start:i] = hash_buf
                child_hashes = [child_hashes[o] for o in order]
        child_hashes.append(h0)
        hashes[i] = combine(child_hashes, seed)
    return ExpressionTree(nodes), np.array(hashes, dtype=np.uint64)


def root_hash(tree: ExpressionTree, mode: HashMode = HashMode.STRICT, seed: int = DEFAULT_SEED) -> int:
    return int(hash_tree(tree, mode, seed)[1][-1])
