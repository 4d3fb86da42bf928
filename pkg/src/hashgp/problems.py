"""Benchmark problem registry and dataset I/O."""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .expr import parse_infix

__all__ = [
    "Dataset",
    "Partition",
    "ProblemSpec",
    "DatasetError",
    "registry",
    "get_problem",
    "load_registry",
    "generate",
    "load_csv",
    "save_csv",
]


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    columns: list[str]
    data: np.ndarray
    target: str

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[1] != len(self.columns):
            raise DatasetError(f"data shape {self.data.shape} does not match {len(self.columns)} columns")
        if self.target not in self.columns:
            raise DatasetError(f"target column {self.target!r} not in dataset")

    @property
    def features(self) -> list[str]:
        return [c for c in self.columns if c != self.target]

    @property
    def X(self) -> np.ndarray:
        keep = [i for i, c in enumerate(self.columns) if c != self.target]
        return self.data[:, keep]

    @property
    def y(self) -> np.ndarray:
        return self.data[:, self.columns.index(self.target)]

    def __len__(self) -> int:
        return self.data.shape[0]


@dataclass
class Partition:
    sampling: str
    rows: int
    ranges: dict[str, list[float]]


@dataclass
class ProblemSpec:
    name: str
    variables: list[str]
    target: str
    formula: str | None = None
    train: Partition | None = None
    test: Partition | None = None
    noise: float = 0.0
    source: str = ""
    interpretation: bool = False
    csv_path: str | None = None
    train_fraction: float = 0.7
    shuffle_seed: int | None = None

    @classmethod
    def from_record(cls, rec: dict) -> ProblemSpec:
        return cls(
            name=rec["name"],
            variables=list(rec["variables"]),
            target=rec.get("target", "y"),
            formula=rec["formula"],
            train=Partition(**rec["train"]),
            test=Partition(**rec["test"]),
            noise=float(rec.get("noise", 0.0)),
            source=rec.get("source", ""),
            interpretation=bool(rec.get("interpretation", False)),
        )


def load_registry(path: str | Path | None = None) -> dict[str, ProblemSpec]:
    if path is None:
        text = resources.files("hashgp").joinpath("data/benchmarks.json").read_text()
    else:
        text = Path(path).read_text()
    records = json.loads(text)["problems"]
    return {rec["name"]: ProblemSpec.from_record(rec) for rec in records}


_REGISTRY: dict[str, ProblemSpec] | None = None


def registry() -> dict[str, ProblemSpec]:
    global _REGISTRY
    if _REGISTRY is None:
        _REGISTRY = load_registry()
    return _REGISTRY


def get_problem(name: str) -> ProblemSpec:
    reg = registry()
    if name not in reg:
        lowered = {k.lower(): k for k in reg}
        if name.lower() not in lowered:
            raise KeyError(f"unknown problem {name!r}; known: {', '.join(reg)}")
        name = lowered[name.lower()]
    return reg[name]


def grid_axis(start: float, stop: float, step: float) -> np.ndarray:
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return start + step * np.arange(n)


def _sample(part: Partition, variables: Sequence[str], rng: np.random.Generator) -> np.ndarray:
    missing = [v for v in variables if v not in part.ranges]
    if missing:
        raise DatasetError(f"no sampling range for {missing}")
    if part.sampling == "grid":
        axes = [grid_axis(*part.ranges[v]) for v in variables]
        X = np.array(list(itertools.product(*axes)), dtype=np.float64).reshape(-1, len(variables))
        if X.shape[0] != part.rows:
            raise DatasetError(f"grid yields {X.shape[0]} rows but {part.rows} are declared")
        return X
    if part.sampling == "uniform":
        cols = [rng.uniform(*part.ranges[v], size=part.rows) for v in variables]
    elif part.sampling == "choice":
        cols = [rng.choice(np.asarray(part.ranges[v], dtype=np.float64), size=part.rows) for v in variables]
    else:
        raise DatasetError(f"unknown sampling mode {part.sampling!r}")
    return np.column_stack(cols) if cols else np.zeros((part.rows, 0))


def generate(spec: ProblemSpec, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Sample train and test partitions for a synthetic problem.

    The target is computed by evaluating the formula as an expression tree
    (the same evaluator used for evolved models), plus Gaussian noise.
    """
    if spec.formula is None:
        raise DatasetError(f"problem {spec.name!r} has no generating formula")
    tree = parse_infix(spec.formula, spec.variables)
    rng = np.random.default_rng(seed)
    out = []
    for part in (spec.train, spec.test):
        X = _sample(part, spec.variables, rng)
        y = tree.evaluate(X)
        if spec.noise:
            y = y + rng.normal(0.0, spec.noise, size=y.shape)
        if not np.all(np.isfinite(y)):
            raise DatasetError(f"problem {spec.name!r} produced non-finite targets")
        out.append(Dataset([*spec.variables, spec.target], np.column_stack([X, y]), spec.target))
    return out[0], out[1]


def load_problem(spec: ProblemSpec, seed: int = 0) -> tuple[Dataset, Dataset]:
    if spec.csv_path is not None:
        return load_csv(spec.csv_path, spec.target, spec.train_fraction, spec.shuffle_seed)
    return generate(spec, seed)


def save_csv(dataset: Dataset, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(dataset.columns)
        for row in dataset.data:
            writer.writerow(repr(float(v)) for v in row)


def read_csv(path: str | Path, target: str) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        if target not in header:
            raise DatasetError(f"{path}: missing target column {target!r}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DatasetError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: non-numeric cell ({exc})") from None
    data = np.array(rows, dtype=np.float64).reshape(-1, len(header))
    return Dataset(header, data, target)


def load_csv(
    path: str | Path,
    target: str,
    train_fraction: float = 0.7,
    shuffle_seed: int | None = None,
) -> tuple[Dataset, Dataset]:
    """Read a headered CSV and split it into train/test.

    Rows are split contiguously unless ``shuffle_seed`` is given.
    """
    if not 0.0 < train_fraction <= 1.0:
        raise DatasetError("train_fraction must be in (0, 1]")
    ds = read_csv(path, target)
    n = len(ds)
    order = np.arange(n)
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(n)
    n_train = int(round(train_fraction * n))
    train = Dataset(ds.columns, ds.data[order[:n_train]], target)
    test = Dataset(ds.columns, ds.data[order[n_train:]], target)
    return train, test
