"""Closed-form client re-weighting.

Given each client's last reported empirical loss L_i and sample count m_i,
the server assigns simplex-constrained weights alpha minimizing

    sum_i alpha_i * L_i  +  (lam / 2) * sum_i alpha_i**2 / m_i
    s.t.  alpha >= 0,  sum(alpha) = 1.

The minimizer has a closed form: sort clients by loss, find the largest
support size p for which the p-th client would still receive positive
weight, and set

    alpha_i = (m_i / M_p) * max(0, 1 + M_p * (Lbar_p - L_i) / lam)

where M_p is the total sample count of the p lowest-loss clients and
Lbar_p their sample-weighted mean loss (the "p-average" consensus loss).
A client whose loss reaches the threshold  lam / M_p + Lbar_p  gets weight
exactly zero. Small lam concentrates weight on the lowest-loss clients;
large lam drives alpha toward m_i / M (plain sample-proportional averaging).

``qp_oracle`` solves the same program by projected gradient descent and
exists purely as an independent cross-check for tests; ``kkt_residuals``
certifies optimality of a candidate alpha through the first-order
conditions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_SUM_DRIFT_BOUND = 1e-9


class OracleFailureError(RuntimeError):
    """Projected gradient descent did not reach stationarity."""


@dataclass(frozen=True)
class SolverInput:
    """Per-client losses and sample counts plus the spread-control strength."""

    losses: np.ndarray
    sample_counts: np.ndarray
    lam: float

    def __post_init__(self) -> None:
        losses = np.asarray(self.losses, dtype=np.float64)
        counts = np.asarray(self.sample_counts, dtype=np.int64)
        object.__setattr__(self, "losses", losses)
        object.__setattr__(self, "sample_counts", counts)
        if losses.ndim != 1 or counts.ndim != 1 or losses.shape != counts.shape:
            raise ValueError("losses and sample_counts must be 1-D of equal length")
        if losses.shape[0] < 1:
            raise ValueError("need at least one client")
        if not np.all(np.isfinite(losses)):
            raise ValueError("losses must be finite")
        if np.any(losses < 0):
            raise ValueError("losses must be non-negative")
        if np.any(counts < 1):
            raise ValueError("sample_counts must be positive integers")
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise ValueError(f"lam must be a positive finite real, got {self.lam}")

    @property
    def num_clients(self) -> int:
        return self.losses.shape[0]


@dataclass(frozen=True)
class SolverOutput:
    """Optimal weights (original client order) plus support diagnostics."""

    weights: np.ndarray
    p: int
    p_average_loss: float
    threshold: float


@dataclass(frozen=True)
class KKTResiduals:
    """First-order optimality residuals for a candidate weight vector.

    ``stationarity`` is the largest |beta_i| over the support (a positive-weight
    client must sit exactly at the recovered dual value), ``dual_feasibility``
    the worst negative part of beta, and ``complementary_slackness`` the largest
    |alpha_i * beta_i|.
    """

    feasibility: float
    stationarity: float
    dual_feasibility: float
    complementary_slackness: float

    @property
    def max_residual(self) -> float:
        return max(
            self.feasibility,
            self.stationarity,
            self.dual_feasibility,
            self.complementary_slackness,
        )


def select_p(sorted_losses: np.ndarray, prefix_counts: np.ndarray, lam: float) -> int:
    """Support size: the largest k whose k-th lowest-loss client keeps positive weight.

    ``sorted_losses`` must be ascending and ``prefix_counts`` the cumulative
    sample counts M_k in the same order. k = 1 always qualifies, so the result
    is >= 1. The qualifying condition is not monotone in k, hence the full scan.
    """
    sorted_losses = np.asarray(sorted_losses, dtype=np.float64)
    prefix_counts = np.asarray(prefix_counts, dtype=np.float64)
    if np.any(np.diff(sorted_losses) < 0):
        raise ValueError("losses must be sorted ascending")
    if lam <= 0:
        raise ValueError("lam must be positive")
    counts = np.diff(prefix_counts, prepend=0.0)
    weighted_prefix = np.cumsum(counts * sorted_losses)
    # condition: 1 + M_k * (Lbar_k - L_k) / lam > 0, with M_k * Lbar_k the weighted prefix sum
    condition = 1.0 + (weighted_prefix - prefix_counts * sorted_losses) / lam
    return int(np.nonzero(condition > 0)[0][-1]) + 1


def solve_weights(inp: SolverInput) -> SolverOutput:
    """Closed-form optimal weights for the regularized weighted-loss objective.

    Clients are sorted by (loss, original index); the returned weights are in
    the original client order, with exactly ``p`` non-zero entries. Weights are
    renormalized by their exact sum to absorb float drift (the drift is checked
    to be below 1e-9 first).
    """
    losses, counts, lam = inp.losses, inp.sample_counts.astype(np.float64), inp.lam
    order = np.argsort(losses, kind="stable")
    prefix_counts = np.cumsum(counts[order])
    p = select_p(losses[order], prefix_counts, lam)

    support_mass = float(prefix_counts[p - 1])
    if p == 1:
        # exact by definition; the divided form can be off by an ulp, which a
        # tiny lam would amplify into visible weight drift
        p_average_loss = float(losses[order[0]])
    else:
        p_average_loss = float(np.sum((counts * losses)[order][:p]) / support_mass)
    threshold = lam / support_mass + p_average_loss

    weights = (counts / support_mass) * np.maximum(
        0.0, 1.0 + support_mass * (p_average_loss - losses) / lam
    )
    total = float(weights.sum())
    if abs(total - 1.0) > _SUM_DRIFT_BOUND:
        raise ArithmeticError(f"weight-sum drift {total - 1.0:.3e} exceeds {_SUM_DRIFT_BOUND}")
    weights = weights / total
    return SolverOutput(weights=weights, p=p, p_average_loss=p_average_loss, threshold=threshold)


def objective_value(
    losses: np.ndarray, alpha: np.ndarray, sample_counts: np.ndarray, lam: float
) -> float:
    """Evaluate  sum alpha_i L_i + (lam/2) sum alpha_i^2 / m_i  for a given alpha."""
    losses = np.asarray(losses, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    counts = np.asarray(sample_counts, dtype=np.float64)
    if not (losses.shape == alpha.shape == counts.shape):
        raise ValueError("losses, alpha and sample_counts must have equal length")
    return float(alpha @ losses + 0.5 * lam * np.sum(alpha**2 / counts))


def _project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.shape[0] + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def qp_oracle(inp: SolverInput, max_iters: int = 100_000) -> np.ndarray:
    """Independent minimizer of the weighting objective, for cross-checks only.

    Projected gradient descent from the uniform point with step 1/L,
    L = lam * max_i(1 / m_i). Stops once the gradient-mapping norm drops
    below 1e-9; raises ``OracleFailureError`` if it is still above 1e-6
    after ``max_iters`` iterations. Never used on the training path.
    """
    losses, counts, lam = inp.losses, inp.sample_counts.astype(np.float64), inp.lam
    n = inp.num_clients
    inv_counts = 1.0 / counts
    step = 1.0 / (lam * float(inv_counts.max()))

    alpha = np.full(n, 1.0 / n)
    mapping_norm = np.inf
    for _ in range(max_iters):
        grad = losses + lam * alpha * inv_counts
        nxt = _project_simplex(alpha - step * grad)
        mapping_norm = float(np.linalg.norm(alpha - nxt)) / step
        alpha = nxt
        if mapping_norm < 1e-9:
            return alpha
    if mapping_norm > 1e-6:
        raise OracleFailureError(
            f"gradient-mapping norm {mapping_norm:.3e} after {max_iters} iterations"
        )
    return alpha


def kkt_residuals(inp: SolverInput, alpha: np.ndarray) -> KKTResiduals:
    """First-order optimality residuals of ``alpha`` for the weighting program.

    Recovers the equality multiplier over the support of alpha as
    (sum_{i in supp} m_i L_i + lam) / sum_{i in supp} m_i, then backs the
    inequality multipliers beta out of stationarity. All four residual maxima
    vanish (to float precision) exactly at the optimum.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    losses, counts, lam = inp.losses, inp.sample_counts.astype(np.float64), inp.lam
    if alpha.shape != losses.shape:
        raise ValueError("alpha length must match the number of clients")

    feasibility = max(abs(float(alpha.sum()) - 1.0), float(max(0.0, -alpha.min())))
    support = alpha > 0
    if not support.any():
        raise ValueError("alpha has no positive entries; expected a feasible point")
    support_mass = float(counts[support].sum())
    eta = (float((counts * losses)[support].sum()) + lam) / support_mass
    beta = losses + lam * alpha / counts - eta

    stationarity = float(np.abs(beta[support]).max()) if support.any() else 0.0
    dual_feasibility = float(max(0.0, -beta.min()))
    complementary_slackness = float(np.abs(alpha * beta).max())
    return KKTResiduals(
        feasibility=feasibility,
        stationarity=stationarity,
        dual_feasibility=dual_feasibility,
        complementary_slackness=complementary_slackness,
    )
