"""Server-side aggregation rules.

Four ways to combine the parameter vectors returned by a round's clients:
the auto-weighted convex combination (``arfl``), sample-count averaging
(``fedavg``), an approximate weighted geometric median via smoothed
Weiszfeld iteration (``rfa``), and Multi-Krum nearest-neighbour scoring
(``mkrum``). All rules are pure functions of the contributions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_RULE_KINDS = ("arfl", "fedavg", "rfa", "mkrum")


class ZeroMassRoundError(RuntimeError):
    """All selected clients carry zero weight; the caller decides the fallback."""


@dataclass(frozen=True)
class ClientContribution:
    """One client's returned parameters plus the metadata aggregation rules use."""

    client_id: int
    params: np.ndarray
    sample_count: int
    weight: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "params", np.asarray(self.params, dtype=np.float64))
        if self.sample_count < 1:
            raise ValueError("sample_count must be positive")
        if self.weight < 0:
            raise ValueError("weight must be non-negative")


@dataclass(frozen=True)
class AggregationRule:
    """Which rule to run plus its rule-specific knobs.

    ``mkrum_f``/``mkrum_m`` may be left as None to be resolved from the round
    size at call time: f = ceil(0.3 n) capped at n - 3, m = n - f - 2.
    """

    kind: str
    rfa_epsilon: float = 1e-6
    rfa_max_iters: int = 100
    mkrum_f: int | None = None
    mkrum_m: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in _RULE_KINDS:
            raise ValueError(f"unknown aggregation rule {self.kind!r}; expected one of {_RULE_KINDS}")
        if self.rfa_epsilon <= 0:
            raise ValueError("rfa_epsilon must be positive")
        if self.rfa_max_iters < 1:
            raise ValueError("rfa_max_iters must be >= 1")
        if self.mkrum_f is not None and self.mkrum_f < 0:
            raise ValueError("mkrum_f must be non-negative")
        if self.mkrum_m is not None and self.mkrum_m < 1:
            raise ValueError("mkrum_m must be >= 1")

    def resolve_mkrum(self, n: int) -> tuple[int, int]:
        """Concrete (f, m) for a round of n contributions."""
        f = self.mkrum_f if self.mkrum_f is not None else max(0, min(math.ceil(0.3 * n), n - 3))
        m = self.mkrum_m if self.mkrum_m is not None else n - f - 2
        return f, m


def _stack(contribs: list[ClientContribution]):
    if not contribs:
        raise ValueError("need at least one contribution")
    length = contribs[0].params.shape[0]
    for c in contribs:
        if c.params.ndim != 1 or c.params.shape[0] != length:
            raise ValueError("all contributed parameter vectors must have equal length")
    params = np.stack([c.params for c in contribs])
    counts = np.array([c.sample_count for c in contribs], dtype=np.float64)
    weights = np.array([c.weight for c in contribs], dtype=np.float64)
    ids = np.array([c.client_id for c in contribs], dtype=np.int64)
    return ids, params, counts, weights


def arfl_aggregate(contribs: list[ClientContribution]) -> np.ndarray:
    """Convex combination of contributions under their solver weights.

    Weights are renormalized over the selected subset; if they sum to zero
    the round carries no usable mass and ``ZeroMassRoundError`` is raised.
    """
    _, params, _, weights = _stack(contribs)
    total = float(weights.sum())
    if total <= 0.0:
        raise ZeroMassRoundError("selected clients have zero total weight")
    return (weights / total) @ params


def fedavg_aggregate(contribs: list[ClientContribution]) -> np.ndarray:
    """Sample-count-weighted mean of the contributed parameters."""
    _, params, counts, _ = _stack(contribs)
    return (counts / counts.sum()) @ params


def rfa_aggregate(
    contribs: list[ClientContribution], epsilon: float = 1e-6, max_iters: int = 100
) -> np.ndarray:
    """Approximate weighted geometric median by smoothed Weiszfeld iteration.

    Starting from the sample-weighted mean, repeats
        v <- sum_i theta_i w_i / sum_i theta_i,
        theta_i = (m_i / sum m) / max(epsilon, ||v - w_i||)
    until the iterate moves less than 1e-8 or ``max_iters`` is reached.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    _, params, counts, _ = _stack(contribs)
    base = counts / counts.sum()
    v = base @ params
    for _ in range(max_iters):
        dist = np.linalg.norm(params - v, axis=1)
        theta = base / np.maximum(dist, epsilon)
        v_next = (theta @ params) / theta.sum()
        moved = float(np.linalg.norm(v_next - v))
        v = v_next
        if moved < 1e-8:
            break
    return v


def rfa_objective(
    contribs: list[ClientContribution], point: np.ndarray, epsilon: float = 1e-6
) -> float:
    """The smoothed geometric-median objective sum_i (m_i/sum m) max(epsilon, ||v - w_i||)."""
    _, params, counts, _ = _stack(contribs)
    dist = np.linalg.norm(params - point, axis=1)
    return float((counts / counts.sum()) @ np.maximum(dist, epsilon))


def mkrum_aggregate(contribs: list[ClientContribution], f: int, m: int) -> np.ndarray:
    """Unweighted mean of the m lowest-scoring updates under Multi-Krum.

    Each update is scored by the sum of squared distances to its n - f - 2
    nearest other updates; score ties break toward the lowest client id.
    Requires n >= f + 3 and 1 <= m <= n - f - 2.
    """
    ids, params, _, _ = _stack(contribs)
    n = params.shape[0]
    if f < 0:
        raise ValueError("f must be non-negative")
    if n < f + 3:
        raise ValueError(f"need at least f + 3 = {f + 3} contributions, got {n}")
    if not (1 <= m <= n - f - 2):
        raise ValueError(f"m must be in [1, n - f - 2] = [1, {n - f - 2}], got {m}")

    diffs = params[:, None, :] - params[None, :, :]
    sq_dist = np.einsum("ijk,ijk->ij", diffs, diffs)
    np.fill_diagonal(sq_dist, np.inf)
    neighbours = np.sort(sq_dist, axis=1)[:, : n - f - 2]
    scores = neighbours.sum(axis=1)
    chosen = np.lexsort((ids, scores))[:m]
    return params[chosen].mean(axis=0)


def aggregate_round(rule: AggregationRule, contribs: list[ClientContribution]) -> np.ndarray:
    """Dispatch a round's contributions to the configured rule."""
    if rule.kind == "arfl":
        return arfl_aggregate(contribs)
    if rule.kind == "fedavg":
        return fedavg_aggregate(contribs)
    if rule.kind == "rfa":
        return rfa_aggregate(contribs, rule.rfa_epsilon, rule.rfa_max_iters)
    f, m = rule.resolve_mkrum(len(contribs))
    return mkrum_aggregate(contribs, f, m)
