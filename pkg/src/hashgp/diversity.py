"""Population distance and diversity from sorted hash sequences.

Similarity between two trees is the Sørensen-Dice coefficient of their
node-hash multisets; distance is one minus that. A population matrix is
built by hashing each tree once, sorting each sequence once, and then
merging every pair of sorted sequences in linear time.
"""

from __future__ import annotations

import csv
import functools
import io
import struct
from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np

from . import hashing
from .expr import ExpressionTree, NodeKind
from .hashing import HashMode

__all__ = [
    "DistanceMatrix",
    "sorted_hashes",
    "tree_hashes",
    "dice_similarity",
    "tree_distance",
    "distance_matrix",
    "distance_matrix_from_hashes",
    "bottom_up_distance_oracle",
    "oracle_distance_matrix",
]


@dataclass
class DistanceMatrix:
    entries: np.ndarray
    diversity: np.ndarray

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(range(self.n))
        for row in self.entries:
            writer.writerow(repr(float(v)) for v in row)
        return buf.getvalue()


def sorted_hashes(values) -> np.ndarray:
    """Ascending copy of a hash sequence (duplicates kept)."""
    return np.sort(np.asarray(values, dtype=np.uint64))


def tree_hashes(tree: ExpressionTree, mode: HashMode = HashMode.STRICT) -> np.ndarray:
    return sorted_hashes(hashing.hash_tree(tree, mode)[1])


def dice_similarity(h1, h2) -> float:
    """Sørensen-Dice coefficient of two sorted multisets, via a linear merge."""
    a = h1.tolist() if isinstance(h1, np.ndarray) else list(h1)
    b = h2.tolist() if isinstance(h2, np.ndarray) else list(h2)
    if not a and not b:
        return 1.0
    i = j = common = 0
    na, nb = len(a), len(b)
    while i < na and j < nb:
        x, y = a[i], b[j]
        if x < y:
            i += 1
        elif y < x:
            j += 1
        else:
            common += 1
            i += 1
            j += 1
    return 2 * common / (na + nb)


def tree_distance(t1: ExpressionTree, t2: ExpressionTree, mode: HashMode = HashMode.STRICT) -> float:
    return 1.0 - dice_similarity(tree_hashes(t1, mode), tree_hashes(t2, mode))


@numba.njit(cache=True)
def _intersection_counts(flat, offsets):
    n = offsets.size - 1
    out = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        a0 = offsets[i]
        a1 = offsets[i + 1]
        out[i, i] = a1 - a0
        for j in range(i + 1, n):
            b0 = offsets[j]
            b1 = offsets[j + 1]
            p = a0
            q = b0
            c = 0
            while p < a1 and q < b1:
                x = flat[p]
                y = flat[q]
                if x < y:
                    p += 1
                elif y < x:
                    q += 1
                else:
                    c += 1
                    p += 1
                    q += 1
            out[i, j] = c
            out[j, i] = c
    return out


def distance_matrix_from_hashes(sequences: Sequence[np.ndarray]) -> DistanceMatrix:
    """Pairwise Dice distances for already-sorted hash sequences."""
    n = len(sequences)
    if n == 0:
        raise ValueError("population must be non-empty")
    lengths = np.fromiter((len(s) for s in sequences), dtype=np.int64, count=n)
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    flat = (
        np.concatenate([np.asarray(s, dtype=np.uint64) for s in sequences])
        if offsets[-1]
        else np.zeros(0, dtype=np.uint64)
    )
    common = _intersection_counts(flat, offsets)
    denom = lengths[:, None] + lengths[None, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        similarity = np.where(denom == 0, 1.0, (2 * common) / denom)
    entries = 1.0 - similarity
    np.fill_diagonal(entries, 0.0)
    if n > 1:
        diversity = entries.sum(axis=1) / (n - 1)
    else:
        diversity = np.zeros(1)
    return DistanceMatrix(entries, diversity)


def distance_matrix(population: Sequence[ExpressionTree], mode: HashMode = HashMode.STRICT) -> DistanceMatrix:
    """Hash every tree once, sort once, then merge all pairs."""
    if not population:
        raise ValueError("population must be non-empty")
    return distance_matrix_from_hashes(
        [np.sort(hashing.hash_tree(t, mode)[1]) for t in population]
    )


# --- hash-free reference --------------------------------------------------

def _canonical_forms(tree: ExpressionTree, mode: HashMode) -> list[tuple]:
    # Canonical form of every subtree as nested tuples (kind, payload, *children),
    # commutative children ordered by structural comparison.
    stack: list[tuple] = []
    forms: list[tuple] = []
    for node in tree.nodes:
        kind = node.kind
        if kind is NodeKind.VARIABLE:
            form = (int(kind), node.variable_index)
        elif kind is NodeKind.CONSTANT:
            bits = struct.unpack("<q", struct.pack("<d", node.constant_value))[0]
            form = (int(kind), bits if mode is HashMode.STRICT else 0)
        else:
            kids = stack[-node.arity:]
            del stack[-node.arity:]
            if kind.commutative:
                kids.sort()
            form = (int(kind), 0, *kids)
        stack.append(form)
        forms.append(form)
    return forms


def bottom_up_distance_oracle(t1: ExpressionTree, t2: ExpressionTree, mode: HashMode = HashMode.STRICT) -> float:
    """Dice distance computed without hashing.

    Builds canonical forms of every subtree of both trees by explicit
    structural comparison, sorts both collections and counts common shapes
    by a merge on structural equality. Slow; meant as a reference.
    """
    a = sorted(_canonical_forms(t1, mode))
    b = sorted(_canonical_forms(t2, mode))
    i = j = common = 0
    while i < len(a) and j < len(b):
        if a[i] < b[j]:
            i += 1
        elif b[j] < a[i]:
            j += 1
        else:
            common += 1
            i += 1
            j += 1
    return 1.0 - 2 * common / (len(a) + len(b))


def oracle_distance_matrix(population: Sequence[ExpressionTree], mode: HashMode = HashMode.STRICT) -> DistanceMatrix:
    n = len(population)
    if n == 0:
        raise ValueError("population must be non-empty")
    entries = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            entries[i, j] = entries[j, i] = bottom_up_distance_oracle(population[i], population[j], mode)
    diversity = entries.sum(axis=1) / (n - 1) if n > 1 else np.zeros(1)
    return DistanceMatrix(entries, diversity)


@functools.lru_cache(maxsize=None)
def warm_up() -> None:
    """Trigger JIT compilation of the pairwise kernel."""
    _intersection_counts(np.zeros(2, dtype=np.uint64), np.array([0, 1, 2], dtype=np.int64))
