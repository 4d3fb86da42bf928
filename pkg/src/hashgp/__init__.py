"""Tree-based genetic programming with hash-based population diversity."""

from .diversity import DistanceMatrix, dice_similarity, distance_matrix, tree_distance
from .evolve import Algorithm, AlgorithmConfig, run
from .expr import ExpressionTree, NodeKind, parse_infix, to_infix
from .hashing import HashMode, hash_tree
from .simplify import simplify

__version__ = "0.1.0"

__all__ = [
    "Algorithm",
    "AlgorithmConfig",
    "DistanceMatrix",
    "ExpressionTree",
    "HashMode",
    "NodeKind",
    "dice_similarity",
    "distance_matrix",
    "hash_tree",
    "parse_infix",
    "run",
    "simplify",
    "to_infix",
    "tree_distance",
]
