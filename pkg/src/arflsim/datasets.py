"""Labeled-dataset containers shared by data generation, corruption and training."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


def _validate_arrays(features: np.ndarray, labels: np.ndarray) -> None:
    if features.ndim != 2:
        raise ValueError(f"features must be a 2-D (samples x dims) array, got ndim={features.ndim}")
    if labels.ndim != 1:
        raise ValueError(f"labels must be a 1-D array, got ndim={labels.ndim}")
    if features.shape[0] != labels.shape[0]:
        raise ValueError(
            f"features/labels length mismatch: {features.shape[0]} vs {labels.shape[0]}"
        )
    if features.size and not np.all(np.isfinite(features)):
        raise ValueError("features contain non-finite values")
    if labels.size and labels.min() < 0:
        raise ValueError("labels must be non-negative class indices")


@dataclass(frozen=True)
class Dataset:
    """A plain labeled dataset: real-valued feature rows plus integer class labels."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "features", np.asarray(self.features, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        _validate_arrays(self.features, self.labels)

    @property
    def num_samples(self) -> int:
        return self.features.shape[0]

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        """Number of classes implied by the labels (max label + 1)."""
        return int(self.labels.max()) + 1 if self.labels.size else 0


@dataclass(frozen=True)
class ClientDataset:
    """One client's local data plus its identity and corruption flag.

    ``is_corrupted`` marks clients whose data was rewritten by an injector;
    the training loop never reads it (the server is agnostic to corruption),
    it exists for metrics and acceptance checks.
    """

    features: np.ndarray
    labels: np.ndarray
    client_id: int
    is_corrupted: bool = field(default=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "features", np.asarray(self.features, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        _validate_arrays(self.features, self.labels)

    @property
    def num_samples(self) -> int:
        return self.features.shape[0]

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    def with_labels(self, labels: np.ndarray, corrupted: bool = True) -> "ClientDataset":
        return replace(self, labels=labels, is_corrupted=corrupted)

    def with_features(self, features: np.ndarray, corrupted: bool = True) -> "ClientDataset":
        return replace(self, features=features, is_corrupted=corrupted)


def as_client(dataset: Dataset, client_id: int) -> ClientDataset:
    """Wrap a plain dataset as a client-owned one (used for held-out test sets)."""
    return ClientDataset(dataset.features, dataset.labels, client_id=client_id)
