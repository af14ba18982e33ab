"""Deterministic data-corruption injectors.

Three ways to damage a client's local data before training starts:
shuffling its labels, flipping every label to one random target class,
or drowning its features in Gaussian noise (then rescaling back to
[0, 1]). ``apply_corruption`` picks which clients to damage from a
dedicated corruption seed so that scenarios are comparable across
aggregation rules and training seeds.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datasets import ClientDataset

SCENARIOS = ("clean", "shuffling", "flipping", "noisy")

_SELECT_STREAM = 201
_CLIENT_STREAM = 202


@dataclass(frozen=True)
class CorruptionSpec:
    """Scenario, fraction of clients to corrupt, noise scale and seed."""

    scenario: str
    fraction: float = 0.0
    noise_sigma: float = 0.7
    seed: int = 0

    def __post_init__(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown corruption scenario {self.scenario!r}; expected one of {SCENARIOS}")
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError("fraction must lie in [0, 1]")
        if self.noise_sigma <= 0:
            raise ValueError("noise_sigma must be positive")


def shuffle_labels(data: ClientDataset, rng: np.random.Generator) -> ClientDataset:
    """Replace the label sequence by a uniformly random permutation of itself."""
    permuted = data.labels[rng.permutation(data.num_samples)]
    return data.with_labels(permuted)


def flip_labels(data: ClientDataset, rng: np.random.Generator, num_classes: int) -> ClientDataset:
    """Force every label to one target class drawn uniformly for this client."""
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    target = int(rng.integers(num_classes))
    return data.with_labels(np.full(data.num_samples, target, dtype=np.int64))


def add_feature_noise(
    data: ClientDataset, sigma: float, rng: np.random.Generator
) -> ClientDataset:
    """Add i.i.d. Gaussian noise to every feature entry, then rescale to [0, 1].

    The rescale is a min-max over the whole client feature matrix; expects
    features already in [0, 1]. If the noisy matrix degenerates to a single
    value, all features are set to 0.5.
    """
    noisy = data.features + rng.normal(0.0, sigma, size=data.features.shape)
    lo, hi = float(noisy.min()), float(noisy.max())
    if hi == lo:
        rescaled = np.full_like(noisy, 0.5)
    else:
        rescaled = (noisy - lo) / (hi - lo)
    return data.with_features(rescaled)


def corrupted_client_count(fraction: float, num_clients: int) -> int:
    """fraction * N rounded to the nearest integer (halves round up)."""
    return int(np.floor(fraction * num_clients + 0.5))


def apply_corruption(
    datasets: list[ClientDataset], spec: CorruptionSpec, num_classes: int | None = None
) -> list[ClientDataset]:
    """Corrupt a seeded uniform subset of clients according to the scenario.

    The clean scenario is the identity. ``num_classes`` is only needed for
    flipping; when omitted it is inferred from the union of labels.
    """
    if not datasets:
        raise ValueError("need at least one client dataset")
    if spec.scenario == "clean":
        return list(datasets)

    n = len(datasets)
    count = corrupted_client_count(spec.fraction, n)
    select_rng = np.random.default_rng([spec.seed, _SELECT_STREAM])
    chosen = set(select_rng.choice(n, size=count, replace=False).tolist())

    if spec.scenario == "flipping" and num_classes is None:
        num_classes = int(max(d.labels.max() for d in datasets if d.num_samples)) + 1

    out = []
    for position, data in enumerate(datasets):
        if position not in chosen:
            out.append(data)
            continue
        rng = np.random.default_rng([spec.seed, _CLIENT_STREAM, data.client_id])
        if spec.scenario == "shuffling":
            out.append(shuffle_labels(data, rng))
        elif spec.scenario == "flipping":
            out.append(flip_labels(data, rng, num_classes))
        else:
            out.append(add_feature_noise(data, spec.noise_sigma, rng))
    return out
