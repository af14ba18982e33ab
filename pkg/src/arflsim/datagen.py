"""Synthetic dataset generation, client partitioning and CSV I/O."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datasets import ClientDataset, Dataset

_BLOB_STREAM = 301
_MOON_STREAM = 302
_IID_STREAM = 303
_DIRICHLET_STREAM = 304
_SPLIT_STREAM = 305

_MAX_DIRICHLET_REDRAWS = 1000


class CsvParseError(ValueError):
    """Malformed dataset file; the message names the offending row."""


@dataclass(frozen=True)
class SyntheticSpec:
    """Synthetic classification problem: isotropic Gaussian blobs (class means
    on a sphere of radius ``class_separation``, unit variance) or a two-class
    interleaved-moons variant."""

    kind: str
    num_classes: int
    samples_per_class: int
    input_dim: int
    class_separation: float
    seed: int

    def __post_init__(self) -> None:
        if self.kind not in ("gaussian_blobs", "two_moons_like"):
            raise ValueError(f"unknown synthetic kind {self.kind!r}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.kind == "two_moons_like" and self.num_classes != 2:
            raise ValueError("two_moons_like is a binary problem")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be >= 1")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.class_separation <= 0:
            raise ValueError("class_separation must be positive")


@dataclass(frozen=True)
class PartitionSpec:
    """How to split one dataset across clients: equal i.i.d. deal or a
    Dirichlet draw of per-class proportions (smaller concentration, more skew)."""

    kind: str
    num_clients: int
    dirichlet_concentration: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("iid_equal", "dirichlet"):
            raise ValueError(f"unknown partition kind {self.kind!r}")
        if self.num_clients < 1:
            raise ValueError("num_clients must be >= 1")
        if self.dirichlet_concentration <= 0:
            raise ValueError("dirichlet_concentration must be positive")


def _class_means(num_classes: int, input_dim: int, radius: float) -> np.ndarray:
    means = np.zeros((num_classes, input_dim))
    if input_dim == 1:
        means[:, 0] = radius * np.where(np.arange(num_classes) % 2 == 0, 1.0, -1.0)
        return means
    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
    means[:, 0] = radius * np.cos(angles)
    means[:, 1] = radius * np.sin(angles)
    return means


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Draw a balanced labeled dataset; deterministic under ``spec.seed``."""
    if spec.kind == "gaussian_blobs":
        rng = np.random.default_rng([spec.seed, _BLOB_STREAM])
        means = _class_means(spec.num_classes, spec.input_dim, spec.class_separation)
        parts = [
            mean + rng.standard_normal((spec.samples_per_class, spec.input_dim))
            for mean in means
        ]
        features = np.vstack(parts)
        labels = np.repeat(np.arange(spec.num_classes), spec.samples_per_class)
        return Dataset(features, labels)

    rng = np.random.default_rng([spec.seed, _MOON_STREAM])
    r = spec.class_separation
    n = spec.samples_per_class
    t0 = rng.uniform(0.0, np.pi, n)
    t1 = rng.uniform(0.0, np.pi, n)
    upper = np.column_stack([r * np.cos(t0), r * np.sin(t0)])
    lower = np.column_stack([r - r * np.cos(t1), r / 2.0 - r * np.sin(t1)])
    planar = np.vstack([upper, lower])
    features = np.zeros((2 * n, spec.input_dim))
    features[:, : min(2, spec.input_dim)] = planar[:, : min(2, spec.input_dim)]
    features += rng.standard_normal(features.shape)
    labels = np.repeat(np.arange(2), n)
    return Dataset(features, labels)


def partition_iid(dataset: Dataset, num_clients: int, seed: int) -> list[ClientDataset]:
    """Per-class round-robin deal after a seeded shuffle.

    Client sizes differ by at most the number of classes; the union of all
    clients is exactly the input dataset. The deal for each class starts at
    a rotating client offset so no client is left empty while others hold
    multiple samples.
    """
    if num_clients > dataset.num_samples:
        raise ValueError(
            f"cannot split {dataset.num_samples} samples across {num_clients} clients"
        )
    rng = np.random.default_rng([seed, _IID_STREAM])
    assigned: list[list[int]] = [[] for _ in range(num_clients)]
    offset = 0
    for cls in np.unique(dataset.labels):
        idx = np.nonzero(dataset.labels == cls)[0]
        idx = idx[rng.permutation(idx.shape[0])]
        for j, sample in enumerate(idx.tolist()):
            assigned[(offset + j) % num_clients].append(sample)
        offset += idx.shape[0]
    return [
        ClientDataset(dataset.features[rows], dataset.labels[rows], client_id=i)
        for i, rows in enumerate(assigned)
    ]


def _largest_remainder(proportions: np.ndarray, total: int) -> np.ndarray:
    """Integer allocation of ``total`` by proportions, remainders favouring
    the largest fractional parts (ties toward the lower index)."""
    raw = proportions * total
    base = np.floor(raw).astype(np.int64)
    leftover = total - int(base.sum())
    if leftover:
        order = np.argsort(-(raw - base), kind="stable")
        base[order[:leftover]] += 1
    return base


def partition_dirichlet(
    dataset: Dataset, num_clients: int, concentration: float, seed: int
) -> list[ClientDataset]:
    """Non-i.i.d. split: per class, draw client proportions from a symmetric
    Dirichlet and allocate that class's samples accordingly.

    Every sample is assigned exactly once (largest-remainder rounding keeps
    class totals exact). A draw that leaves any client empty is retried in
    full with the next seed.
    """
    if num_clients > dataset.num_samples:
        raise ValueError(
            f"cannot split {dataset.num_samples} samples across {num_clients} clients"
        )
    classes = np.unique(dataset.labels)
    for attempt in range(_MAX_DIRICHLET_REDRAWS):
        rng = np.random.default_rng([seed + attempt, _DIRICHLET_STREAM])
        assigned: list[list[int]] = [[] for _ in range(num_clients)]
        for cls in classes:
            idx = np.nonzero(dataset.labels == cls)[0]
            proportions = rng.dirichlet(np.full(num_clients, concentration))
            counts = _largest_remainder(proportions, idx.shape[0])
            bounds = np.concatenate([[0], np.cumsum(counts)])
            for client in range(num_clients):
                assigned[client].extend(idx[bounds[client] : bounds[client + 1]].tolist())
        if all(rows for rows in assigned):
            return [
                ClientDataset(dataset.features[rows], dataset.labels[rows], client_id=i)
                for i, rows in enumerate(assigned)
            ]
    raise RuntimeError(
        f"no Dirichlet draw without empty clients after {_MAX_DIRICHLET_REDRAWS} attempts"
    )


def split_train_test(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified train/test split: per class, a seeded shuffle then a
    round-to-nearest share goes to the test side."""
    if not 0.0 <= test_fraction < 1.0:
        raise ValueError("test_fraction must lie in [0, 1)")
    rng = np.random.default_rng([seed, _SPLIT_STREAM])
    train_rows: list[int] = []
    test_rows: list[int] = []
    for cls in np.unique(dataset.labels):
        idx = np.nonzero(dataset.labels == cls)[0]
        idx = idx[rng.permutation(idx.shape[0])]
        n_test = int(np.floor(test_fraction * idx.shape[0] + 0.5))
        test_rows.extend(idx[:n_test].tolist())
        train_rows.extend(idx[n_test:].tolist())
    train_rows.sort()
    test_rows.sort()
    return (
        Dataset(dataset.features[train_rows], dataset.labels[train_rows]),
        Dataset(dataset.features[test_rows], dataset.labels[test_rows]),
    )


def scale_to_unit_interval(dataset: Dataset) -> Dataset:
    """Min-max scale every feature column to [0, 1]; constant columns map to 0.5."""
    lo = dataset.features.min(axis=0)
    hi = dataset.features.max(axis=0)
    span = hi - lo
    flat = span == 0
    span = np.where(flat, 1.0, span)
    scaled = (dataset.features - lo) / span
    scaled[:, flat] = 0.5
    return Dataset(scaled, dataset.labels)


def load_csv(path: str | Path) -> Dataset:
    """Read a header-less CSV of feature columns followed by an integer label.

    Raises ``CsvParseError`` with the 1-based row number for malformed rows,
    inconsistent widths, or an empty file.
    """
    path = Path(path)
    features: list[list[float]] = []
    labels: list[int] = []
    width: int | None = None
    with path.open(newline="", encoding="utf-8") as handle:
        for row_num, row in enumerate(csv.reader(handle), start=1):
            if not row:
                continue
            if len(row) < 2:
                raise CsvParseError(f"row {row_num}: expected features plus a label column")
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise CsvParseError(
                    f"row {row_num}: {len(row)} columns, expected {width}"
                )
            try:
                features.append([float(v) for v in row[:-1]])
            except ValueError as exc:
                raise CsvParseError(f"row {row_num}: non-numeric feature value") from exc
            try:
                label = int(row[-1])
            except ValueError as exc:
                raise CsvParseError(f"row {row_num}: non-integer label") from exc
            if label < 0:
                raise CsvParseError(f"row {row_num}: label must be non-negative")
            labels.append(label)
    if not labels:
        raise CsvParseError(f"{path}: empty dataset file")
    return Dataset(np.array(features), np.array(labels))


def save_csv(dataset: Dataset, path: str | Path) -> None:
    """Write a dataset in the ``load_csv`` format; float features are emitted
    via ``repr`` so a round-trip reproduces them bit-exactly."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        for row, label in zip(dataset.features, dataset.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])
