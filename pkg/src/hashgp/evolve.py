"""Evolutionary drivers: standard GA, diversity-augmented GA and NSGA-2.

Fitness is the squared Pearson correlation between model output and
target on the training data, so it lies in [0, 1]. Diversity is each
individual's average hash-based distance to the rest of its population,
also in [0, 1]. The diversity GA selects on ``fitness + diversity``; NSGA-2
treats the two as separate objectives, both maximized.
"""

from __future__ import annotations

import enum
import random
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from .diversity import distance_matrix_from_hashes
from .expr import ExpressionTree, Grammar, ptc2, to_infix
from .hashing import HashMode, hash_tree
from .nsga import crowding_distance, fast_nondominated_sort
from .operators import MUTATIONS, Limits, mutate, subtree_crossover
from .problems import Dataset
from .simplify import simplify

__all__ = [
    "Algorithm",
    "AlgorithmConfig",
    "Individual",
    "GenerationStats",
    "r_squared",
    "run_ga",
    "run_nsga2",
    "run",
    "model_report",
]


class Algorithm(enum.Enum):
    GA = "ga"
    GA_DIVERSITY = "ga-div"
    NSGA2 = "nsga2"


@dataclass
class AlgorithmConfig:
    population_size: int = 100
    generations: int = 50
    tournament_size: int = 5
    elite_count: int = 1
    mutation_probability: float = 0.25
    crossover_probability: float = 1.0
    internal_crossover_probability: float = 0.9
    max_length: int = 50
    max_depth: int = 12
    hash_mode: HashMode = HashMode.STRICT
    algorithm: Algorithm = Algorithm.GA
    seed: int = 0
    mutation_weights: dict[str, float] = field(default_factory=lambda: {m: 1.0 for m in MUTATIONS})
    constant_range: tuple[float, float] = (-5.0, 5.0)
    variable_weight: float = 1.0
    constant_weight: float = 1.0
    simplify_offspring: bool = False
    threads: int = 1

    def __post_init__(self):
        self.hash_mode = HashMode(self.hash_mode)
        self.algorithm = Algorithm(self.algorithm)
        self.constant_range = tuple(float(v) for v in self.constant_range)
        self.validate()

    def validate(self) -> None:
        for name in ("population_size", "generations", "tournament_size", "max_length", "max_depth", "threads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.elite_count < self.population_size:
            raise ValueError("elite_count must be in [0, population_size)")
        for name in ("mutation_probability", "crossover_probability", "internal_crossover_probability"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        unknown = set(self.mutation_weights) - set(MUTATIONS)
        if unknown:
            raise ValueError(f"unknown mutation operators: {sorted(unknown)}")
        if not any(w > 0 for w in self.mutation_weights.values()):
            raise ValueError("at least one mutation weight must be positive")
        lo, hi = self.constant_range
        if not lo <= hi:
            raise ValueError("constant_range must be (low, high) with low <= high")

    def as_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, enum.Enum):
                v = v.value
            elif isinstance(v, tuple):
                v = list(v)
            elif isinstance(v, dict):
                v = dict(v)
            out[f.name] = v
        return out


@dataclass
class Individual:
    tree: ExpressionTree
    fitness: float = 0.0
    diversity: float = 0.0
    hashes: np.ndarray | None = None
    objectives: tuple[float, float] | None = None
    rank: int = 0
    crowding: float = 0.0

    def sorted_hashes(self, mode: HashMode) -> np.ndarray:
        if self.hashes is None:
            self.hashes = np.sort(hash_tree(self.tree, mode)[1])
        return self.hashes


@dataclass
class GenerationStats:
    generation: int
    best_fitness: float
    median_fitness: float
    average_diversity: float
    average_length: float
    elapsed: float = 0.0

    CSV_FIELDS = ("generation", "best_fitness", "median_fitness", "average_diversity", "average_length")

    def csv_row(self) -> list[str]:
        return [str(self.generation)] + [repr(float(getattr(self, f))) for f in self.CSV_FIELDS[1:]]


def r_squared(predictions, targets) -> float:
    """Squared Pearson correlation; 0 for non-finite or constant predictions."""
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {t.shape}")
    if p.size < 2 or not np.all(np.isfinite(p)):
        return 0.0
    with np.errstate(all="ignore"):
        dp = p - p.mean()
        dt = t - t.mean()
        ss_p = float(dp @ dp)
        ss_t = float(dt @ dt)
        if ss_p == 0.0 or ss_t == 0.0:
            return 0.0
        cov = float(dp @ dt)
        r2 = (cov / ss_p) * (cov / ss_t)
    if not np.isfinite(r2):
        return 0.0
    return min(max(r2, 0.0), 1.0)


class _Evaluator:
    def __init__(self, X: np.ndarray, y: np.ndarray, threads: int = 1):
        self.X = X
        self.y = y
        self.threads = threads

    def fitness(self, tree: ExpressionTree) -> float:
        return r_squared(tree.evaluate(self.X), self.y)

    def evaluate(self, individuals: Sequence[Individual]) -> None:
        if self.threads > 1 and len(individuals) > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                values = list(pool.map(self.fitness, [ind.tree for ind in individuals]))
        else:
            values = [self.fitness(ind.tree) for ind in individuals]
        for ind, f in zip(individuals, values):
            ind.fitness = f


def _grammar(config: AlgorithmConfig, n_variables: int) -> Grammar:
    return Grammar(
        n_variables,
        variable_weight=config.variable_weight,
        constant_weight=config.constant_weight,
        constant_range=tuple(config.constant_range),
    )


def _initial_population(rng, grammar: Grammar, config: AlgorithmConfig) -> list[Individual]:
    upper = max(1, config.max_length - grammar.max_arity + 1)
    pop = []
    for _ in range(config.population_size):
        tree = ptc2(rng, grammar, rng.randint(1, upper), config.max_depth)
        pop.append(Individual(tree))
    return pop


def _assign_diversity(pop: Sequence[Individual], mode: HashMode) -> np.ndarray:
    dm = distance_matrix_from_hashes([ind.sorted_hashes(mode) for ind in pop])
    for ind, d in zip(pop, dm.diversity):
        ind.diversity = float(d)
    return dm.diversity


def _stats(generation: int, pop: Sequence[Individual], average_diversity: float, start: float) -> GenerationStats:
    fit = [ind.fitness for ind in pop]
    return GenerationStats(
        generation=generation,
        best_fitness=max(fit),
        median_fitness=float(statistics.median(fit)),
        average_diversity=float(average_diversity),
        average_length=float(np.mean([len(ind.tree) for ind in pop])),
        elapsed=time.perf_counter() - start,
    )


class _Breeder:
    def __init__(self, rng, grammar: Grammar, config: AlgorithmConfig):
        self.rng = rng
        self.grammar = grammar
        self.config = config
        self.limits = Limits(config.max_length, config.max_depth)

    def offspring(self, parent_a: ExpressionTree, pick_mate: Callable[[], ExpressionTree]) -> Individual:
        rng, cfg = self.rng, self.config
        if rng.random() < cfg.crossover_probability:
            child = subtree_crossover(
                rng, parent_a, pick_mate(), cfg.max_length, cfg.max_depth,
                internal_probability=cfg.internal_crossover_probability,
            )
        else:
            child = parent_a
        if rng.random() < cfg.mutation_probability:
            child = mutate(rng, child, self.grammar, self.limits, cfg.mutation_weights)
        if cfg.simplify_offspring:
            child = simplify(child)[0]
        return Individual(child)


def _tournament(rng, scores: Sequence[float], size: int) -> int:
    n = len(scores)
    best = rng.randrange(n)
    for _ in range(size - 1):
        k = rng.randrange(n)
        if scores[k] > scores[best]:
            best = k
    return best


GenerationCallback = Callable[[int, list[Individual]], None]


def run_ga(
    config: AlgorithmConfig,
    train: Dataset,
    on_generation: GenerationCallback | None = None,
) -> tuple[Individual, list[GenerationStats]]:
    """Generational GA with elitism; selection score is f, or f + d for GA_DIVERSITY."""
    if config.algorithm not in (Algorithm.GA, Algorithm.GA_DIVERSITY):
        raise ValueError(f"run_ga cannot run {config.algorithm.value}")
    start = time.perf_counter()
    rng = random.Random(config.seed)
    grammar = _grammar(config, train.X.shape[1])
    evaluator = _Evaluator(train.X, train.y, config.threads)
    breeder = _Breeder(rng, grammar, config)
    mode = config.hash_mode
    use_diversity = config.algorithm is Algorithm.GA_DIVERSITY

    pop = _initial_population(rng, grammar, config)
    evaluator.evaluate(pop)
    _assign_diversity(pop, mode)
    trace: list[GenerationStats] = []
    for gen in range(1, config.generations + 1):
        scores = [ind.fitness + ind.diversity if use_diversity else ind.fitness for ind in pop]
        by_fitness = sorted(range(len(pop)), key=lambda k: -pop[k].fitness)
        elites = [pop[k] for k in by_fitness[: config.elite_count]]
        children: list[Individual] = []
        while len(children) < config.population_size - len(elites):
            a = pop[_tournament(rng, scores, config.tournament_size)].tree
            children.append(
                breeder.offspring(a, lambda: pop[_tournament(rng, scores, config.tournament_size)].tree)
            )
        evaluator.evaluate(children)
        pop = [Individual(e.tree, e.fitness, hashes=e.hashes) for e in elites] + children
        diversity = _assign_diversity(pop, mode)
        trace.append(_stats(gen, pop, float(np.mean(diversity)), start))
        if on_generation is not None:
            on_generation(gen, pop)
    best = max(pop, key=lambda ind: ind.fitness)
    return best, trace


def _rank_and_crowd(pop: Sequence[Individual]) -> list[list[int]]:
    objectives = [ind.objectives for ind in pop]
    fronts = fast_nondominated_sort(objectives)
    for r, front in enumerate(fronts):
        cd = crowding_distance([objectives[k] for k in front])
        for k, c in zip(front, cd):
            pop[k].rank = r
            pop[k].crowding = float(c)
    return fronts


def _binary_tournament(rng, pop: Sequence[Individual]) -> Individual:
    a = pop[rng.randrange(len(pop))]
    b = pop[rng.randrange(len(pop))]
    if b.rank < a.rank or (b.rank == a.rank and b.crowding > a.crowding):
        return b
    return a


def run_nsga2(
    config: AlgorithmConfig,
    train: Dataset,
    on_generation: GenerationCallback | None = None,
) -> tuple[list[Individual], list[GenerationStats]]:
    """NSGA-2 on (fitness, diversity); returns the first front of the final population."""
    if config.algorithm is not Algorithm.NSGA2:
        raise ValueError(f"run_nsga2 cannot run {config.algorithm.value}")
    start = time.perf_counter()
    rng = random.Random(config.seed)
    grammar = _grammar(config, train.X.shape[1])
    evaluator = _Evaluator(train.X, train.y, config.threads)
    breeder = _Breeder(rng, grammar, config)
    mode = config.hash_mode
    n = config.population_size

    pop = _initial_population(rng, grammar, config)
    evaluator.evaluate(pop)
    _assign_diversity(pop, mode)
    for ind in pop:
        ind.objectives = (ind.fitness, ind.diversity)
    _rank_and_crowd(pop)

    trace: list[GenerationStats] = []
    for gen in range(1, config.generations + 1):
        offspring = [
            breeder.offspring(
                _binary_tournament(rng, pop).tree,
                lambda: _binary_tournament(rng, pop).tree,
            )
            for _ in range(n)
        ]
        evaluator.evaluate(offspring)
        combined = pop + offspring
        _assign_diversity(combined, mode)
        for ind in combined:
            ind.objectives = (ind.fitness, ind.diversity)
        fronts = _rank_and_crowd(combined)
        survivors: list[Individual] = []
        for front in fronts:
            if len(survivors) + len(front) <= n:
                survivors.extend(combined[k] for k in front)
                continue
            # most isolated first; stable on index for determinism
            ordered = sorted(front, key=lambda k: -combined[k].crowding)
            survivors.extend(combined[k] for k in ordered[: n - len(survivors)])
            break
        pop = survivors
        own = distance_matrix_from_hashes([ind.sorted_hashes(mode) for ind in pop]).diversity
        trace.append(_stats(gen, pop, float(np.mean(own)), start))
        if on_generation is not None:
            on_generation(gen, pop)
    front = [ind for ind in pop if ind.rank == 0]
    return front, trace


def run(config: AlgorithmConfig, train: Dataset, on_generation: GenerationCallback | None = None):
    """Dispatch on ``config.algorithm``; returns (best individual, front, trace)."""
    if config.algorithm is Algorithm.NSGA2:
        front, trace = run_nsga2(config, train, on_generation)
        best = max(front, key=lambda ind: ind.fitness)
        return best, front, trace
    best, trace = run_ga(config, train, on_generation)
    return best, [best], trace


def affine_scaling(predictions: np.ndarray, targets: np.ndarray) -> tuple[float, float]:
    """Least-squares (intercept, slope) mapping predictions onto targets."""
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        return float(t.mean()), 0.0
    with np.errstate(all="ignore"):
        dp = p - p.mean()
        var = float(dp @ dp)
        slope = float(dp @ (t - t.mean())) / var if var > 0 else 0.0
    if not np.isfinite(slope):
        slope = 0.0
    return float(t.mean() - slope * p.mean()), slope


def model_report(ind: Individual, train: Dataset, test: Dataset | None = None) -> dict:
    names = train.features
    pred_train = ind.tree.evaluate(train.X)
    intercept, slope = affine_scaling(pred_train, train.y)
    text = to_infix(ind.tree, names)
    report = {
        "model": text,
        "scaled_model": f"({intercept!r} + ({slope!r} * {text}))",
        "intercept": intercept,
        "slope": slope,
        "length": len(ind.tree),
        "depth": ind.tree.depth(),
        "train_r2": r_squared(pred_train, train.y),
    }
    if test is not None:
        report["test_r2"] = r_squared(ind.tree.evaluate(test.X), test.y)
    return report
