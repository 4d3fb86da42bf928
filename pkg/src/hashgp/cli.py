"""Command-line front end: experiments, hashing, simplification and distances.

Exit codes are 0 on success, 1 for usage or configuration errors and 2 for
failures while running.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import random
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import diversity
from .evolve import Algorithm, AlgorithmConfig, GenerationStats, model_report, run
from .expr import Grammar, ParseError, node_label, parse_infix, ptc2, to_infix
from .hashing import HashMode, hash_tree
from .problems import DatasetError, ProblemSpec, get_problem, load_problem
from .simplify import simplify

__all__ = [
    "ExperimentConfig",
    "ConfigError",
    "PROFILES",
    "load_config",
    "summarize",
    "read_generations",
    "read_matrix_csv",
    "read_summary",
    "bench_distance",
    "aggregate_runs",
    "main",
]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

PROFILES = {
    "desk": {"population_size": 100, "generations": 50, "repetitions": 10},
    "paper": {"population_size": 1000, "generations": 500, "repetitions": 50},
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    algorithm: AlgorithmConfig = field(default_factory=AlgorithmConfig)
    problem: str = "Poly-10"
    data_seed: int = 0
    csv_path: str | None = None
    target: str = "y"
    train_fraction: float = 0.7
    shuffle_seed: int | None = None
    repetitions: int = 10
    output: str = "results"
    workers: int = 1

    def __post_init__(self):
        if self.repetitions < 1:
            raise ConfigError("repetitions must be at least 1")
        if self.workers < 1:
            raise ConfigError("threads must be at least 1")

    def problem_spec(self) -> ProblemSpec:
        if self.csv_path is not None:
            return ProblemSpec(
                name=Path(self.csv_path).stem,
                variables=[],
                target=self.target,
                csv_path=self.csv_path,
                train_fraction=self.train_fraction,
                shuffle_seed=self.shuffle_seed,
            )
        try:
            return get_problem(self.problem)
        except KeyError as exc:
            raise ConfigError(exc.args[0]) from None

    def as_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "algorithm"}
        out["algorithm"] = self.algorithm.as_dict()
        return out


# --- config files -----------------------------------------------------------

def _convert(name: str, text: str, default):
    text = text.strip()
    try:
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int) and not isinstance(default, bool):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(float(v) for v in text.split(","))
        if isinstance(default, dict):
            # "remove_branch=1, one_point=2"
            pairs = [p.split("=") for p in text.split(",") if p.strip()]
            return {k.strip(): float(v) for k, v in pairs}
    except ValueError:
        raise ConfigError(f"bad value for {name}: {text!r}") from None
    return text


def load_config(
    path: str | Path | None = None,
    profile: str = "desk",
    overrides: dict | None = None,
) -> ExperimentConfig:
    """Build an experiment config from a profile, an INI file and overrides.

    Later sources win. The INI file has optional sections ``[algorithm]``
    (any ``AlgorithmConfig`` field), ``[problem]`` (``name``, ``seed``,
    ``csv``, ``target``, ``train_fraction``, ``shuffle_seed``) and
    ``[experiment]`` (``repetitions``, ``seed``, ``output``, ``threads``).
    """
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}")
    base = AlgorithmConfig()
    algo = {f.name: getattr(base, f.name) for f in fields(AlgorithmConfig)}
    algo["hash_mode"] = base.hash_mode.value
    algo["algorithm"] = base.algorithm.value
    exp: dict = {}
    for key, value in PROFILES[profile].items():
        (exp if key == "repetitions" else algo)[key] = value

    if path is not None:
        parser = configparser.ConfigParser()
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        unknown = set(parser.sections()) - {"algorithm", "problem", "experiment"}
        if unknown:
            raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
        if parser.has_section("algorithm"):
            for key, text in parser.items("algorithm"):
                if key not in algo:
                    raise ConfigError(f"{path}: unknown algorithm option {key!r}")
                algo[key] = _convert(key, text, algo[key])
        problem_keys = {
            "name": ("problem", str), "seed": ("data_seed", int), "csv": ("csv_path", str),
            "target": ("target", str), "train_fraction": ("train_fraction", float),
            "shuffle_seed": ("shuffle_seed", int),
        }
        experiment_keys = {
            "repetitions": ("repetitions", int), "output": ("output", str),
            "threads": ("workers", int), "seed": ("seed", int),
        }
        for section, keys in (("problem", problem_keys), ("experiment", experiment_keys)):
            if not parser.has_section(section):
                continue
            for key, text in parser.items(section):
                if key not in keys:
                    raise ConfigError(f"{path}: unknown {section} option {key!r}")
                target, kind = keys[key]
                try:
                    value = kind(text.strip())
                except ValueError:
                    raise ConfigError(f"{path}: bad value for {section}.{key}: {text!r}") from None
                if target == "seed":
                    algo["seed"] = value
                else:
                    exp[target] = value

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in algo:
            algo[key] = value
        else:
            exp[key] = value
    try:
        return ExperimentConfig(algorithm=AlgorithmConfig(**algo), **exp)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


# --- run / summary ------------------------------------------------------------

def summarize(values: Sequence[float]) -> dict:
    """Median and interquartile range (linear-interpolated percentiles)."""
    v = np.asarray(values, dtype=np.float64)
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return {"median": float(med), "q1": float(q1), "q3": float(q3), "iqr": float(q3 - q1)}


def write_generations(path: Path, trace: Sequence[GenerationStats]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(GenerationStats.CSV_FIELDS)
        for row in trace:
            writer.writerow(row.csv_row())


def read_generations(path: str | Path) -> list[GenerationStats]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != GenerationStats.CSV_FIELDS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [
            GenerationStats(
                generation=int(row["generation"]),
                **{k: float(row[k]) for k in GenerationStats.CSV_FIELDS[1:]},
            )
            for row in reader
        ]


def read_summary(path: str | Path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _run_one(config: ExperimentConfig, index: int) -> dict:
    algo = AlgorithmConfig(**{**config.algorithm.as_dict(), "seed": config.algorithm.seed + index})
    train, test = load_problem(config.problem_spec(), config.data_seed)
    start = time.perf_counter()
    best, front, trace = run(algo, train)
    wall = time.perf_counter() - start

    run_dir = Path(config.output) / f"run_{index:03d}"
    run_dir.mkdir(parents=True, exist_ok=True)
    write_generations(run_dir / "generations.csv", trace)
    report = model_report(best, train, test)
    report["seed"] = algo.seed
    report["algorithm"] = algo.algorithm.value
    if algo.algorithm is Algorithm.NSGA2:
        report["front"] = [
            {"model": to_infix(ind.tree, train.features), "fitness": ind.fitness, "diversity": ind.diversity}
            for ind in sorted(front, key=lambda ind: -ind.fitness)
        ]
    _dump_json(run_dir / "model.json", report)
    return {
        "run": index,
        "seed": algo.seed,
        "train_r2": report["train_r2"],
        "test_r2": report["test_r2"],
        "length": report["length"],
        "wall_time": wall,
    }


def run_experiment(config: ExperimentConfig) -> dict:
    """Run all repetitions, write per-run files and ``summary.json``; return the summary."""
    out = Path(config.output)
    out.mkdir(parents=True, exist_ok=True)
    # fail early (and in this process) on a bad problem definition
    load_problem(config.problem_spec(), config.data_seed)
    indices = range(config.repetitions)
    if config.workers > 1 and config.repetitions > 1:
        with ProcessPoolExecutor(min(config.workers, config.repetitions)) as pool:
            runs = list(pool.map(_run_one, [config] * config.repetitions, indices))
    else:
        runs = [_run_one(config, i) for i in indices]
    summary = {
        "problem": config.problem_spec().name,
        "config": config.as_dict(),
        "runs": runs,
        "train_r2": summarize([r["train_r2"] for r in runs]),
        "test_r2": summarize([r["test_r2"] for r in runs]),
        "wall_time": {"per_run": [r["wall_time"] for r in runs], "total": float(sum(r["wall_time"] for r in runs))},
    }
    _dump_json(out / "summary.json", summary)
    return summary


def aggregate_runs(directory: str | Path) -> list[dict]:
    """Per-generation medians of average diversity and length across runs."""
    paths = sorted(Path(directory).glob("run_*/generations.csv"))
    if not paths:
        raise FileNotFoundError(f"no run_*/generations.csv files under {directory}")
    traces = [read_generations(p) for p in paths]
    n_gen = min(len(t) for t in traces)
    rows = []
    for g in range(n_gen):
        rows.append({
            "generation": traces[0][g].generation,
            "median_average_diversity": float(np.median([t[g].average_diversity for t in traces])),
            "median_average_length": float(np.median([t[g].average_length for t in traces])),
            "runs": len(traces),
        })
    return rows


# --- distances ----------------------------------------------------------------

def read_matrix_csv(source) -> np.ndarray:
    """Parse the matrix CSV written by ``distance`` (``#`` lines are ignored)."""
    text = Path(source).read_text() if isinstance(source, (str, Path)) else source.read()
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return np.array([[float(v) for v in row] for row in rows[1:]], dtype=np.float64).reshape(len(rows) - 1, -1)


def random_trees(n: int, size: int, seed: int = 0, n_variables: int = 5, max_depth: int = 12) -> list:
    rng = random.Random(seed)
    grammar = Grammar(n_variables)
    return [ptc2(rng, grammar, size, max_depth) for _ in range(n)]


def bench_distance(n: int = 1000, size: int = 50, seed: int = 0, mode: HashMode = HashMode.STRICT) -> dict:
    """Time the hash-based distance matrix against the hash-free oracle."""
    if n < 2:
        raise ValueError("n must be at least 2")
    trees = random_trees(n, size, seed)
    diversity.warm_up()
    t0 = time.perf_counter()
    fast = diversity.distance_matrix(trees, mode)
    t1 = time.perf_counter()
    slow = diversity.oracle_distance_matrix(trees, mode)
    t2 = time.perf_counter()
    hash_time, oracle_time = t1 - t0, t2 - t1
    return {
        "n": n,
        "mean_length": float(np.mean([len(t) for t in trees])),
        "hash_seconds": hash_time,
        "oracle_seconds": oracle_time,
        "speedup": oracle_time / hash_time if hash_time > 0 else float("inf"),
        "max_abs_difference": float(np.max(np.abs(fast.entries - slow.entries))),
        "average_diversity": float(np.mean(fast.diversity)),
    }


# --- argument handling ----------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _names(text: str | None):
    return [n.strip() for n in text.split(",")] if text else None


def _read_expression(args) -> str:
    return args.expression if args.expression is not None else sys.stdin.read().strip()


def _cmd_run(args) -> int:
    try:
        config = load_config(
            args.config,
            args.profile,
            {
                "seed": args.seed,
                "hash_mode": args.mode,
                "algorithm": args.algorithm,
                "output": args.out,
                "workers": args.threads,
                "problem": args.problem,
                "repetitions": args.repetitions,
            },
        )
        config.problem_spec()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        summary = run_experiment(config)
    except (DatasetError, OSError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    tr, te = summary["train_r2"], summary["test_r2"]
    print(f"{summary['problem']}: {len(summary['runs'])} runs written to {config.output}")
    print(f"train R2 median {tr['median']:.4f} (IQR {tr['iqr']:.4f}); test R2 median {te['median']:.4f} (IQR {te['iqr']:.4f})")
    return EXIT_OK


def _cmd_hash(args) -> int:
    names = _names(args.vars)
    try:
        tree = parse_infix(_read_expression(args), names)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    mode = HashMode(args.mode)
    canonical, hashes = hash_tree(tree, mode)
    print(f"canonical: {to_infix(canonical, names)}")
    print(f"root hash: {int(hashes[-1]):#018x}")
    print(f"{'index':>5}  {'node':<12} {'length':>6}  hash")
    for i, (node, h) in enumerate(zip(canonical.nodes, hashes)):
        print(f"{i:>5}  {node_label(node, names):<12} {node.length:>6}  {int(h):#018x}")
    return EXIT_OK


def _cmd_simplify(args) -> int:
    names = _names(args.vars)
    try:
        tree = parse_infix(_read_expression(args), names)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    result, report = simplify(tree)
    print(to_infix(result, names))
    print(f"nodes: {report.original_length} -> {report.simplified_length}")
    for rule, position in report.rules_applied:
        print(f"{rule} at node {position}")
    return EXIT_OK


def _cmd_distance(args) -> int:
    names = _names(args.vars)
    try:
        lines = Path(args.file).read_text().splitlines()
    except OSError as exc:
        print(f"cannot read {args.file}: {exc.strerror}", file=sys.stderr)
        return EXIT_USAGE
    trees = []
    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        try:
            trees.append(parse_infix(text, names))
        except ParseError as exc:
            print(f"{args.file}:{lineno}: parse error: {exc}", file=sys.stderr)
            return EXIT_USAGE
    if not trees:
        print(f"{args.file}: no expressions", file=sys.stderr)
        return EXIT_USAGE
    dm = diversity.distance_matrix(trees, HashMode(args.mode))
    buf = io.StringIO()
    buf.write(dm.to_csv())
    if args.out:
        Path(args.out).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    print("# diversity: " + ",".join(repr(float(d)) for d in dm.diversity))
    print(f"# average diversity: {float(np.mean(dm.diversity))!r}")
    return EXIT_OK


def _cmd_bench_distance(args) -> int:
    if args.n < 2:
        print("bench-distance needs --n >= 2", file=sys.stderr)
        return EXIT_USAGE
    report = bench_distance(args.n, args.size, args.seed, HashMode(args.mode))
    print(f"trees: {report['n']} (mean length {report['mean_length']:.1f})")
    print(f"hash-based matrix: {report['hash_seconds']:.3f} s")
    print(f"bottom-up oracle:  {report['oracle_seconds']:.3f} s")
    print(f"speedup: {report['speedup']:.1f}x")
    print(f"max |difference|: {report['max_abs_difference']:.3g}")
    return EXIT_OK


def _cmd_plotdata(args) -> int:
    try:
        rows = aggregate_runs(args.directory)
    except (FileNotFoundError, ValueError) as exc:
        print(f"plotdata: {exc}", file=sys.stderr)
        return EXIT_USAGE
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["generation", "median_average_diversity", "median_average_length", "runs"])
    for r in rows:
        writer.writerow([r["generation"], repr(r["median_average_diversity"]), repr(r["median_average_length"]), r["runs"]])
    if args.out:
        Path(args.out).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hashgp", description="Hash-based diversity for tree-based genetic programming.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    modes = [m.value for m in HashMode]

    p = sub.add_parser("run", help="run an experiment (one or more seeded repetitions)")
    p.add_argument("--config", help="INI file with [algorithm], [problem] and [experiment] sections")
    p.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    p.add_argument("--seed", type=int, help="base seed; repetition i uses seed + i")
    p.add_argument("--mode", choices=modes)
    p.add_argument("--algorithm", choices=[a.value for a in Algorithm])
    p.add_argument("--problem", help="registry problem name, e.g. Poly-10")
    p.add_argument("--repetitions", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, help="repetitions run in parallel processes")
    p.set_defaults(func=_cmd_run)

    for name, func, text in (
        ("hash", _cmd_hash, "print the canonical form and per-node hashes of an expression"),
        ("simplify", _cmd_simplify, "simplify an expression"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("expression", nargs="?", help="infix expression (read from stdin if omitted)")
        p.add_argument("--vars", help="comma-separated variable names (default x0, x1, ...)")
        if name == "hash":
            p.add_argument("--mode", choices=modes, default=HashMode.STRICT.value)
        p.set_defaults(func=func)

    p = sub.add_parser("distance", help="distance matrix of the expressions in a file (one per line)")
    p.add_argument("file")
    p.add_argument("--mode", choices=modes, default=HashMode.STRICT.value)
    p.add_argument("--vars")
    p.add_argument("--out", help="write the matrix CSV here instead of stdout")
    p.set_defaults(func=_cmd_distance)

    p = sub.add_parser("bench-distance", help="time hash-based distances against the hash-free oracle")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--size", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=modes, default=HashMode.STRICT.value)
    p.set_defaults(func=_cmd_bench_distance)

    p = sub.add_parser("plotdata", help="per-generation medians across the runs in a directory")
    p.add_argument("directory")
    p.add_argument("--out", help="write CSV here instead of stdout")
    p.set_defaults(func=_cmd_plotdata)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the runtime exit code
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
