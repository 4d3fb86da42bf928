"""Acceptance criteria, one test (or parametrized group) per criterion.

Each check prints a single ``PASS``/``FAIL`` line with the measured value
next to its pinned threshold, and the full list is repeated in the pytest
terminal summary. Thresholds are fixed here and must not be relaxed to make
a line green.
"""

import random
import statistics
import time
from collections import Counter
from functools import lru_cache

import numpy as np
import pytest

from hashgp import cli, diversity
from hashgp.diversity import dice_similarity, distance_matrix, tree_distance
from hashgp.evolve import AlgorithmConfig, run, run_nsga2
from hashgp.expr import ExpressionTree, Grammar, NodeKind, constant, make_node, parse_infix, ptc2, to_infix, variable
from hashgp.hashing import HashMode, hash_tree, root_hash
from hashgp.nsga import crowding_distance, dominates, fast_nondominated_sort
from hashgp.problems import generate, get_problem
from hashgp.simplify import simplify

from conftest import shuffle_commutative

# pinned thresholds
CENSUS_MAX_NODES = 7
CENSUS_SECONDS = 60.0
PERMUTATION_TREES = 10_000
DICE_PAIRS = 10_000
MATRIX_TREES = 500
BENCH_TREES = 1000
BENCH_SIZE = 50
BENCH_MIN_SPEEDUP = 50.0
BENCH_MAX_DIFF = 1e-12
BENCH_SECONDS = 600.0
SIMPLIFY_TREES = 1000
SIMPLIFY_ROWS = 100
SIMPLIFY_REL_TOL = 1e-9
NSGA_POPULATIONS = 1000
NSGA_MAX_SIZE = 200
TREND_PROBLEMS = ("Poly-10", "Pagie-1")
TREND_SEEDS = range(10)
TREND_R2_SLACK = 0.02
TREND_SECONDS = 900.0

# frozen oracle values: raw trees of up to 7 nodes over {Add, Mul, Sub, x0, x1, C}
# and the number of distinct canonical forms among them (3 + 21 + 252 + 3927)
CENSUS_RAW_TREES = 11451
CENSUS_CANONICAL_FORMS = 4203

RESULTS: list[str] = []


def record(capsys, criterion: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}  [{criterion}] {detail}"
    RESULTS.append(line)
    with capsys.disabled():
        print("\n" + line)


# --- 1. hash census -------------------------------------------------------------

_LEAVES = (tuple(variable(0)), tuple(variable(1)), tuple(constant(1.0)))
_OPS = (NodeKind.ADD, NodeKind.MUL, NodeKind.SUB)


@lru_cache(maxsize=None)
def _trees_of_size(n: int) -> list[tuple]:
    if n == 1:
        return list(_LEAVES)
    out = []
    for left in range(1, n - 1):
        for a in _trees_of_size(left):
            for b in _trees_of_size(n - 1 - left):
                out.extend(tuple(make_node(op, [a, b])) for op in _OPS)
    return out


def _structural_form(tree: ExpressionTree, i: int | None = None):
    # hash-free canonical form: commutative children sorted by structural order
    if i is None:
        i = len(tree) - 1
    node = tree[i]
    if node.kind is NodeKind.VARIABLE:
        return ("var", node.variable_index)
    if node.kind is NodeKind.CONSTANT:
        return ("const",)
    kids = [_structural_form(tree, c) for c in tree.children(i)]
    if node.kind.commutative:
        kids.sort()
    return (node.kind.name, *kids)


def test_c1_hash_census(capsys):
    start = time.perf_counter()
    trees = [ExpressionTree(t) for n in range(1, CENSUS_MAX_NODES + 1) for t in _trees_of_size(n)]
    by_form: dict = {}
    canon_by_form: dict = {}
    for t in trees:
        canonical, hashes = hash_tree(t, HashMode.STRUCTURAL)
        form = _structural_form(t)
        by_form.setdefault(form, set()).add(int(hashes[-1]))
        canon_by_form.setdefault(form, set()).add(canonical.nodes)
    unsound = sum(len(h) > 1 for h in by_form.values())
    non_canonical = sum(len(c) > 1 for c in canon_by_form.values())
    hash_owner = Counter(next(iter(h)) for h in by_form.values())
    collisions = sum(c - 1 for c in hash_owner.values() if c > 1)
    elapsed = time.perf_counter() - start
    ok = (
        len(trees) == CENSUS_RAW_TREES
        and len(by_form) == CENSUS_CANONICAL_FORMS
        and unsound == 0
        and non_canonical == 0
        and collisions == 0
        and elapsed < CENSUS_SECONDS
    )
    record(capsys, "1 hash census", ok,
           f"{len(trees)} trees, {len(by_form)} canonical forms, unsound={unsound}, "
           f"non-unique canonical trees={non_canonical}, collisions={collisions} (need 0), {elapsed:.1f}s (< {CENSUS_SECONDS:.0f}s)")
    assert ok


# --- 2. commutativity -----------------------------------------------------------

def test_c2_commutativity(capsys):
    rng = random.Random(2024)
    grammar = Grammar(3)
    failures = {m: 0 for m in HashMode}
    for k in range(PERMUTATION_TREES):
        tree = ptc2(rng, grammar, rng.randint(1, 49), 12)
        if k % 2:
            tree = simplify(tree)[0]  # exercises n-ary sums and products
        shuffled = shuffle_commutative(rng, tree)
        for mode in HashMode:
            failures[mode] += root_hash(tree, mode) != root_hash(shuffled, mode)
    ok = all(v == 0 for v in failures.values())
    record(capsys, "2 commutativity", ok,
           f"{PERMUTATION_TREES} trees, failures strict={failures[HashMode.STRICT]} "
           f"structural={failures[HashMode.STRUCTURAL]} (need 0)")
    assert ok


# --- 3. Dice against brute-force multiset counts ------------------------------------

def test_c3_dice_oracle(capsys):
    rng = np.random.default_rng(3)
    mismatches = 0
    for _ in range(DICE_PAIRS):
        # small alphabets force duplicates; values spread over the full uint64 range
        alphabet = rng.integers(0, 2**64, size=int(rng.integers(1, 20)), dtype=np.uint64, endpoint=False)
        a = np.sort(rng.choice(alphabet, size=int(rng.integers(0, 60))))
        b = np.sort(rng.choice(alphabet, size=int(rng.integers(0, 60))))
        la, lb = a.tolist(), b.tolist()
        common = sum((Counter(la) & Counter(lb)).values())
        expected = 1.0 if not la and not lb else 2 * common / (len(la) + len(lb))
        mismatches += dice_similarity(a, b) != expected
    ok = mismatches == 0
    record(capsys, "3 dice oracle", ok, f"{DICE_PAIRS} pairs, mismatches={mismatches} (exact, need 0)")
    assert ok


# --- 4. matrix consistency and hashing cost -----------------------------------------

def test_c4_matrix_consistency(capsys, monkeypatch):
    rng = random.Random(4)
    grammar = Grammar(3)
    population = [ptc2(rng, grammar, rng.randint(1, 49), 12) for _ in range(MATRIX_TREES)]
    calls = [0]
    real = diversity.hashing.hash_tree

    def counting(*args, **kwargs):
        calls[0] += 1
        return real(*args, **kwargs)

    monkeypatch.setattr(diversity.hashing, "hash_tree", counting)
    dm = distance_matrix(population)
    hash_calls = calls[0]
    monkeypatch.setattr(diversity.hashing, "hash_tree", real)

    mismatches = 0
    for i in range(MATRIX_TREES):
        for j in range(i + 1, MATRIX_TREES):
            d = tree_distance(population[i], population[j])
            mismatches += (dm.entries[i, j] != d) + (dm.entries[j, i] != d)
    mismatches += int(np.count_nonzero(np.diag(dm.entries)))
    ok = mismatches == 0 and hash_calls == MATRIX_TREES
    record(capsys, "4 matrix consistency", ok,
           f"{MATRIX_TREES} trees, entry mismatches={mismatches} (need 0), hash_tree calls={hash_calls} (need {MATRIX_TREES})")
    assert ok


# --- 5. hash-based matrix vs bottom-up oracle timing ----------------------------------

def test_c5_bench_distance(capsys):
    start = time.perf_counter()
    report = cli.bench_distance(BENCH_TREES, BENCH_SIZE, seed=0)
    elapsed = time.perf_counter() - start
    ok = (
        report["speedup"] >= BENCH_MIN_SPEEDUP
        and report["max_abs_difference"] <= BENCH_MAX_DIFF
        and elapsed < BENCH_SECONDS
    )
    record(capsys, "5 distance benchmark", ok,
           f"{report['n']} trees of mean length {report['mean_length']:.1f}: hash {report['hash_seconds']:.2f}s, "
           f"oracle {report['oracle_seconds']:.1f}s, speedup {report['speedup']:.0f}x (>= {BENCH_MIN_SPEEDUP:.0f}x), "
           f"max diff {report['max_abs_difference']:.1e} (<= {BENCH_MAX_DIFF:.0e}), {elapsed:.0f}s (< {BENCH_SECONDS:.0f}s)")
    assert ok


# --- 6. simplifier semantics and idempotence -------------------------------------------

def test_c6_simplifier_semantics(capsys):
    rng = random.Random(6)
    nrng = np.random.default_rng(6)
    grammar = Grammar(3)
    semantic_failures = 0
    idempotence_failures = 0
    worst = 0.0
    compared = 0
    for _ in range(SIMPLIFY_TREES):
        tree = ptc2(rng, grammar, rng.randint(1, 49), 12)
        out, _ = simplify(tree)
        X = nrng.uniform(-5, 5, (SIMPLIFY_ROWS, 3))
        a, b = tree.evaluate(X), out.evaluate(X)
        keep = np.isfinite(a) & np.isfinite(b)
        compared += int(keep.sum())
        diff = np.abs(a[keep] - b[keep])
        scale = np.maximum(np.abs(a[keep]), np.abs(b[keep]))
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.where(diff == 0, 0.0, diff / scale)
        if rel.size:
            worst = max(worst, float(rel.max()))
        semantic_failures += bool(np.any(rel > SIMPLIFY_REL_TOL))
        idempotence_failures += bool(simplify(out)[1].rules_applied)
    ok = semantic_failures == 0 and idempotence_failures == 0
    record(capsys, "6 simplifier semantics", ok,
           f"{SIMPLIFY_TREES} trees x {SIMPLIFY_ROWS} rows ({compared} finite rows): trees over tolerance={semantic_failures} "
           f"(worst relative diff {worst:.2e}, need <= {SIMPLIFY_REL_TOL:.0e}), idempotence failures={idempotence_failures}")
    assert ok


# --- 7. additive merge example -------------------------------------------------------

def test_c7_additive_merge_example(capsys):
    names = ["x", "y", "z"]
    rng = random.Random(7)
    cases = [(2.0, 3.0, 5.0)] + [tuple(round(rng.uniform(-5, 5), 3) for _ in range(3)) for _ in range(20)]
    bad = []
    for c1, c2, c3 in cases:
        tree = parse_infix(f"{c1!r}*x + {c2!r}*y*z + {c3!r}*x", names)
        out, report = simplify(tree)
        expected = f"(({c1 + c3!r} * x) + ({c2!r} * y * z))"
        if c1 + c3 == 1.0 or c1 + c3 == 0.0:
            continue  # unit or zero coefficient takes a different, shorter shape
        if (to_infix(out, names), report.original_length, report.simplified_length) != (expected, 11, 8):
            bad.append((c1, c2, c3, to_infix(out, names)))
    out, report = simplify(parse_infix("2*x + 3*y*z + 5*x", names))
    ok = not bad and report.original_length == 11 and report.simplified_length == 8
    record(capsys, "7 additive merge", ok,
           f"'2*x + 3*y*z + 5*x' -> '{to_infix(out, names)}', nodes {report.original_length} -> "
           f"{report.simplified_length} (need 11 -> 8); {len(cases)} coefficient triples, mismatches={len(bad)}")
    assert ok


# --- 8. NSGA-2 machinery ----------------------------------------------------------------

def _peel_fronts(F: np.ndarray) -> list[list[int]]:
    remaining = list(range(len(F)))
    fronts = []
    while remaining:
        R = F[remaining]
        ge = np.all(R[:, None, :] >= R[None, :, :], axis=2)
        gt = np.any(R[:, None, :] > R[None, :, :], axis=2)
        dominated = (ge & gt).any(axis=0)
        front = [remaining[k] for k in range(len(remaining)) if not dominated[k]]
        fronts.append(front)
        remaining = [r for r in remaining if r not in set(front)]
    return fronts


def _brute_crowding(F: np.ndarray) -> np.ndarray:
    n = len(F)
    if n <= 2:
        return np.full(n, np.inf)
    d = np.zeros(n)
    for m in range(F.shape[1]):
        order = sorted(range(n), key=lambda i: (F[i, m], i))
        lo, hi = F[order[0], m], F[order[-1], m]
        d[order[0]] = d[order[-1]] = np.inf
        if hi > lo:
            for p in range(1, n - 1):
                d[order[p]] += (F[order[p + 1], m] - F[order[p - 1], m]) / (hi - lo)
    return d


def test_c8_nsga_machinery(capsys):
    rng = np.random.default_rng(8)
    sort_mismatch = crowd_mismatch = 0
    for k in range(NSGA_POPULATIONS):
        n = int(rng.integers(1, NSGA_MAX_SIZE + 1))
        # alternate continuous values with coarse grids that produce many ties
        F = rng.random((n, 2)) if k % 2 else rng.integers(0, 8, (n, 2)).astype(float)
        fronts = fast_nondominated_sort(F)
        sort_mismatch += fronts != _peel_fronts(F)
        for front in fronts:
            got = crowding_distance(F[front])
            want = _brute_crowding(F[front])
            crowd_mismatch += not np.allclose(got, want, rtol=1e-12, atol=0.0)

    violations = [0]
    generations = [0]

    def check(gen, pop):
        generations[0] += 1
        objs = [ind.objectives for ind in pop]
        for ind in pop:
            if ind.rank == 0 and any(dominates(o, ind.objectives) for o in objs):
                violations[0] += 1

    train, _ = generate(get_problem("Poly-10"), 0)
    run_nsga2(AlgorithmConfig(algorithm="nsga2", population_size=50, generations=20, seed=8), train, check)
    ok = sort_mismatch == 0 and crowd_mismatch == 0 and violations[0] == 0 and generations[0] == 20
    record(capsys, "8 NSGA-2 machinery", ok,
           f"{NSGA_POPULATIONS} populations (size <= {NSGA_MAX_SIZE}): sort mismatches={sort_mismatch}, "
           f"crowding mismatches={crowd_mismatch}; smoke run front-1 violations={violations[0]} over {generations[0]} generations")
    assert ok


# --- 9. scaled diversity / accuracy trend -----------------------------------------------

@lru_cache(maxsize=None)
def _trend(problem: str) -> dict:
    train, _ = generate(get_problem(problem), 0)
    out = {}
    start = time.perf_counter()
    for alg in ("ga", "ga-div", "nsga2"):
        div, length, r2 = [], [], []
        for seed in TREND_SEEDS:
            best, _, trace = run(AlgorithmConfig(algorithm=alg, population_size=100, generations=50, seed=seed), train)
            div.append(trace[-1].average_diversity)
            length.append(trace[-1].average_length)
            r2.append(best.fitness)
        out[alg] = {
            "diversity": statistics.median(div),
            "length": statistics.median(length),
            "r2": statistics.median(r2),
        }
    out["seconds"] = time.perf_counter() - start
    return out


@pytest.mark.parametrize("problem", TREND_PROBLEMS)
def test_c9a_diversity(capsys, problem):
    t = _trend(problem)
    ok = t["ga-div"]["diversity"] >= t["ga"]["diversity"]
    record(capsys, f"9a diversity {problem}", ok,
           f"median final average diversity GA-div {t['ga-div']['diversity']:.3f} >= GA {t['ga']['diversity']:.3f} "
           f"(NSGA-2 {t['nsga2']['diversity']:.3f})")
    assert ok


@pytest.mark.parametrize("problem", TREND_PROBLEMS)
def test_c9b_length(capsys, problem):
    t = _trend(problem)
    ok = t["ga-div"]["length"] <= t["ga"]["length"]
    record(capsys, f"9b length {problem}", ok,
           f"median final average length GA-div {t['ga-div']['length']:.1f} <= GA {t['ga']['length']:.1f} "
           f"(NSGA-2 {t['nsga2']['length']:.1f})")
    assert ok


@pytest.mark.parametrize("problem", TREND_PROBLEMS)
def test_c9c_accuracy(capsys, problem):
    t = _trend(problem)
    floor = t["ga"]["r2"] - TREND_R2_SLACK
    ok = t["ga-div"]["r2"] >= floor and t["nsga2"]["r2"] >= floor
    record(capsys, f"9c accuracy {problem}", ok,
           f"median train R2 GA {t['ga']['r2']:.3f}, GA-div {t['ga-div']['r2']:.3f}, NSGA-2 {t['nsga2']['r2']:.3f} "
           f"(both need >= {floor:.3f})")
    assert ok


def test_c9_runtime(capsys):
    total = sum(_trend(p)["seconds"] for p in TREND_PROBLEMS)
    ok = total < TREND_SECONDS
    record(capsys, "9 trend runtime", ok, f"{total:.0f}s for 2 problems x 3 algorithms x {len(TREND_SEEDS)} seeds (< {TREND_SECONDS:.0f}s)")
    assert ok


# --- 10. determinism across threads -------------------------------------------------------

def test_c10_determinism(capsys, tmp_path):
    differing = []
    for alg in ("ga", "ga-div", "nsga2"):
        cfg = tmp_path / f"{alg}.ini"
        cfg.write_text(
            f"[algorithm]\npopulation_size = 40\ngenerations = 8\nalgorithm = {alg}\n"
            f"[problem]\nname = Pagie-1\n[experiment]\nrepetitions = 3\nseed = 10\n"
        )
        dirs = []
        for label, threads in (("a", 1), ("b", 1), ("c", 3)):
            out = tmp_path / f"{alg}-{label}"
            assert cli.main(["run", "--config", str(cfg), "--out", str(out), "--threads", str(threads)]) == 0
            dirs.append(out)
        for rep in range(3):
            blobs = {(d / f"run_{rep:03d}" / "generations.csv").read_bytes() for d in dirs}
            if len(blobs) != 1:
                differing.append(f"{alg}/run_{rep:03d}")
        # evaluation threads inside a single run
        train, _ = generate(get_problem("Pagie-1"), 0)
        rows = {
            tuple(tuple(r.csv_row()) for r in run(AlgorithmConfig(algorithm=alg, population_size=40, generations=8, seed=10, threads=t), train)[2])
            for t in (1, 4)
        }
        if len(rows) != 1:
            differing.append(f"{alg}/evaluation-threads")
    ok = not differing
    record(capsys, "10 determinism", ok,
           f"generation CSVs byte-identical across repeated runs and --threads 1/3 and evaluation threads 1/4; differing={differing or 'none'}")
    assert ok
