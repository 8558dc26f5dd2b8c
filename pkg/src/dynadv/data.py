"""Datasets: synthetic generation, CSV ingestion, normalization and splitting.

Labels follow one convention everywhere: 0 is Legitimate, 1 is Malicious.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class ClassLabel(enum.IntEnum):
    LEGITIMATE = 0
    MALICIOUS = 1


class DataError(ValueError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    feature_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=np.int8)
        if X.ndim != 2:
            raise DataError(f"samples must be a 2-d array, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise DataError(f"{X.shape[0]} samples but {y.shape[0]} labels")
        if not np.isin(y, (0, 1)).all():
            raise DataError("labels must be 0 (Legitimate) or 1 (Malicious)")
        names = tuple(self.feature_names) or tuple(f"x{i}" for i in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise DataError(f"{len(names)} feature names for {X.shape[1]} features")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "feature_names", names)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def legitimate(self) -> "Dataset":
        return self.subset(self.y == ClassLabel.LEGITIMATE)

    @property
    def malicious(self) -> "Dataset":
        return self.subset(self.y == ClassLabel.MALICIOUS)

    def subset(self, rows) -> "Dataset":
        return Dataset(self.X[rows], self.y[rows], self.feature_names)

    def project(self, columns: Sequence[int]) -> "Dataset":
        columns = list(columns)
        return Dataset(
            self.X[:, columns], self.y, tuple(self.feature_names[c] for c in columns)
        )

    def has_both_classes(self) -> bool:
        return len(np.unique(self.y)) == 2


@dataclass(frozen=True)
class SyntheticSpec:
    dim: int = 10
    n_per_class: int = 250
    mu_legitimate: float = 0.75
    mu_malicious: float = 0.25
    sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1 or self.n_per_class < 1:
            raise DataError("dim and n_per_class must be positive")
        if not self.sigma >= 0:
            raise DataError("sigma must be >= 0")
        for mu in (self.mu_legitimate, self.mu_malicious):
            if not 0.0 <= mu <= 1.0:
                raise DataError(f"class mean {mu} outside [0, 1]")


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Two Gaussian blobs, one per class, clipped into the unit cube."""
    rng = np.random.default_rng(spec.seed)
    shape = (spec.n_per_class, spec.dim)
    legit = rng.normal(spec.mu_legitimate, spec.sigma, shape)
    malicious = rng.normal(spec.mu_malicious, spec.sigma, shape)
    X = np.clip(np.vstack([legit, malicious]), 0.0, 1.0)
    y = np.repeat([ClassLabel.LEGITIMATE, ClassLabel.MALICIOUS], spec.n_per_class)
    return Dataset(X, y)


def load_csv(path, label_column: str, legitimate_value: str) -> Dataset:
    """Read a headered CSV; ``legitimate_value`` names the raw label meaning Legitimate.

    Every other column must be numeric. The label column must hold exactly two
    distinct values, one of which is ``legitimate_value``.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if label_column not in header:
            raise DataError(f"{path}: label column {label_column!r} not in header")
        label_idx = header.index(label_column)
        names = [h for i, h in enumerate(header) if i != label_idx]
        rows, raw_labels = [], []
        # row numbers are 1-based file lines, header is line 1
        for lineno, record in enumerate(reader, start=2):
            if not record or all(not c.strip() for c in record):
                continue
            if len(record) != len(header):
                raise DataError(
                    f"{path}: row {lineno} has {len(record)} fields, expected {len(header)}"
                )
            values = []
            for i, cell in enumerate(record):
                if i == label_idx:
                    continue
                try:
                    values.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: row {lineno}, column {header[i]!r}: "
                        f"non-numeric value {cell!r}"
                    ) from None
            rows.append(values)
            raw_labels.append(record[label_idx].strip())

    distinct = sorted(set(raw_labels))
    if len(distinct) > 2:
        raise DataError(f"{path}: label column has {len(distinct)} values {distinct}")
    if legitimate_value not in distinct:
        raise DataError(f"{path}: legitimate label {legitimate_value!r} never occurs")
    y = [ClassLabel.LEGITIMATE if v == legitimate_value else ClassLabel.MALICIOUS
         for v in raw_labels]
    X = np.array(rows, dtype=float).reshape(len(rows), len(names))
    return Dataset(X, np.array(y), tuple(names))


def write_csv(d: Dataset, path, label_column: str = "label") -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([*d.feature_names, label_column])
        for row, label in zip(d.X, d.y):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def min_max_normalize(d: Dataset) -> Dataset:
    if len(d) == 0:
        raise DataError("cannot normalize an empty dataset")
    lo = d.X.min(axis=0)
    span = d.X.max(axis=0) - lo
    constant = span == 0
    X = (d.X - lo) / np.where(constant, 1.0, span)
    X[:, constant] = 0.0
    # rounding can leave values a hair outside [0, 1]
    return Dataset(np.clip(X, 0.0, 1.0), d.y, d.feature_names)


def shuffle_split(d: Dataset, seed, train_fraction: float = 0.7) -> tuple[Dataset, Dataset]:
    """Class-stratified shuffled split into (train, test)."""
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for label in (ClassLabel.LEGITIMATE, ClassLabel.MALICIOUS):
        idx = np.flatnonzero(d.y == label)
        if idx.size == 0:
            continue
        idx = rng.permutation(idx)
        cut = int(round(train_fraction * idx.size))
        train_idx.append(idx[:cut])
        test_idx.append(idx[cut:])
    train_idx = rng.permutation(np.concatenate(train_idx))
    test_idx = rng.permutation(np.concatenate(test_idx))
    if train_idx.size == 0 or test_idx.size == 0:
        raise DataError("split leaves an empty partition")
    return d.subset(train_idx), d.subset(test_idx)
