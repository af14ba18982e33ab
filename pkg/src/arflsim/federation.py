"""The synchronous federated training loop.

Each round the server samples a client subset, broadcasts the current
global parameters, collects locally trained parameters together with each
client's loss *of the broadcast model*, aggregates under the configured
rule, and only then refreshes the weight vector from the loss cache. Two
consequences worth knowing:

* Aggregation always uses the weights computed in the previous round; the
  freshly reported losses only influence the *next* round's weights.
* The loss cache keeps the last reported value per client, so weights for
  unselected clients are computed from stale losses. Both follow from the
  communication pattern: clients are only contacted when selected.

Everything is deterministic given the training seed: the server sampling
stream, parameter init and per-client minibatch order all derive from it.
Client updates within a round are pure functions of (params, data, seeds),
so running them on a thread pool is bit-identical to the serial loop.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .aggregate import AggregationRule, ClientContribution, ZeroMassRoundError, aggregate_round
from .datasets import ClientDataset
from .model import ModelArch, TrainConfig, client_update, empirical_loss, evaluate_accuracy, init_params
from .solver import SolverInput, solve_weights

_SAMPLING_STREAM = 102


@dataclass(frozen=True)
class FederationConfig:
    """Loop-level knobs: local training config, participation, weighting strength."""

    train: TrainConfig
    clients_per_round: int
    lam: float
    rounds: int
    eval_interval: int = 1
    parallel: bool = False

    def __post_init__(self) -> None:
        if self.clients_per_round < 1:
            raise ValueError("clients_per_round must be >= 1")
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if self.eval_interval < 1:
            raise ValueError("eval_interval must be >= 1")


@dataclass
class LossCache:
    """Last reported loss per client and the round it was reported in."""

    losses: np.ndarray
    last_updated_round: np.ndarray

    @classmethod
    def full(cls, losses: np.ndarray) -> "LossCache":
        n = losses.shape[0]
        return cls(losses=losses.copy(), last_updated_round=np.zeros(n, dtype=np.int64))

    def write(self, client_id: int, loss: float, round_index: int) -> None:
        self.losses[client_id] = loss
        self.last_updated_round[client_id] = round_index


@dataclass(frozen=True)
class RoundPlan:
    """The client subset participating in one round."""

    selected: tuple[int, ...]


@dataclass
class ServerState:
    round: int
    global_params: np.ndarray
    alpha: np.ndarray
    loss_cache: LossCache
    sampling_rng: np.random.Generator = field(repr=False)


@dataclass(frozen=True)
class RoundRecord:
    """Everything exported about one round (arrays are length num-clients)."""

    round: int
    selected: tuple[int, ...]
    alpha: np.ndarray
    cached_losses: np.ndarray
    train_loss: float
    test_loss: float
    test_accuracy: float
    aggregation_skipped: bool


def _check_clients(clients: list[ClientDataset]) -> None:
    if not clients:
        raise ValueError("need at least one client")
    for position, data in enumerate(clients):
        if data.client_id != position:
            raise ValueError("client ids must equal list positions 0..N-1")
        if data.num_samples == 0:
            raise ValueError(f"client {position} has no data")


def _sample_counts(clients: list[ClientDataset]) -> np.ndarray:
    return np.array([c.num_samples for c in clients], dtype=np.int64)


def _proportional_alpha(clients: list[ClientDataset]) -> np.ndarray:
    counts = _sample_counts(clients).astype(np.float64)
    return counts / counts.sum()


def initialize(
    clients: list[ClientDataset],
    arch: ModelArch,
    cfg: FederationConfig,
    rule: AggregationRule,
) -> ServerState:
    """Seeded global init plus the initial loss broadcast.

    The initial model is evaluated on every client to fill the loss cache;
    the auto-weighted rule solves for its starting weights from that cache,
    all other rules start (and stay) at sample-proportional weights.
    """
    _check_clients(clients)
    w0 = init_params(arch, cfg.train.seed)
    losses = np.array([empirical_loss(w0, arch, c) for c in clients])
    cache = LossCache.full(losses)
    if rule.kind == "arfl":
        alpha = solve_weights(SolverInput(cache.losses, _sample_counts(clients), cfg.lam)).weights
    else:
        alpha = _proportional_alpha(clients)
    rng = np.random.default_rng([cfg.train.seed, _SAMPLING_STREAM])
    return ServerState(
        round=0, global_params=w0, alpha=alpha, loss_cache=cache, sampling_rng=rng
    )


def plan_round(state: ServerState, num_clients: int, clients_per_round: int) -> RoundPlan:
    """Uniform sample without replacement from the server's sampling stream."""
    size = min(clients_per_round, num_clients)
    chosen = state.sampling_rng.choice(num_clients, size=size, replace=False)
    return RoundPlan(selected=tuple(sorted(int(c) for c in chosen)))


def run_round(
    state: ServerState,
    clients: list[ClientDataset],
    arch: ModelArch,
    cfg: FederationConfig,
    rule: AggregationRule,
    test_data: ClientDataset | None = None,
) -> tuple[ServerState, RoundRecord]:
    """Advance the loop by one round; mutates and returns ``state``.

    Order of operations: sample, client updates on the current model,
    aggregation under the pre-round weights, cache write, weight refresh.
    A zero-mass round (every selected client weighted zero) keeps the
    previous parameters but still refreshes losses and weights so the
    weighting can recover.
    """
    round_index = state.round + 1
    plan = plan_round(state, len(clients), cfg.clients_per_round)

    def one(cid: int) -> tuple[np.ndarray, float]:
        return client_update(
            cid, state.global_params, arch, clients[cid], cfg.train, round_index
        )

    if cfg.parallel and len(plan.selected) > 1:
        with ThreadPoolExecutor(max_workers=min(8, len(plan.selected))) as pool:
            results = list(pool.map(one, plan.selected))
    else:
        results = [one(cid) for cid in plan.selected]

    contribs = [
        ClientContribution(
            client_id=cid,
            params=params,
            sample_count=clients[cid].num_samples,
            weight=float(state.alpha[cid]),
        )
        for cid, (params, _) in zip(plan.selected, results)
    ]
    skipped = False
    try:
        new_params = aggregate_round(rule, contribs)
    except ZeroMassRoundError:
        new_params = state.global_params
        skipped = True

    for cid, (_, reported_loss) in zip(plan.selected, results):
        state.loss_cache.write(cid, reported_loss, round_index)
    if rule.kind == "arfl":
        state.alpha = solve_weights(
            SolverInput(state.loss_cache.losses, _sample_counts(clients), cfg.lam)
        ).weights

    state.global_params = new_params
    state.round = round_index

    evaluate = round_index % cfg.eval_interval == 0 or round_index == cfg.rounds
    record = RoundRecord(
        round=round_index,
        selected=plan.selected,
        alpha=state.alpha.copy(),
        cached_losses=state.loss_cache.losses.copy(),
        aggregation_skipped=skipped,
        **_metrics(state.global_params, arch, clients, test_data, evaluate),
    )
    return state, record


def _metrics(
    params: np.ndarray,
    arch: ModelArch,
    clients: list[ClientDataset],
    test_data: ClientDataset | None,
    evaluate: bool,
) -> dict[str, float]:
    if not evaluate:
        return {"train_loss": np.nan, "test_loss": np.nan, "test_accuracy": np.nan}
    counts = _sample_counts(clients).astype(np.float64)
    per_client = np.array([empirical_loss(params, arch, c) for c in clients])
    train_loss = float(counts @ per_client / counts.sum())
    if test_data is None:
        return {"train_loss": train_loss, "test_loss": np.nan, "test_accuracy": np.nan}
    return {
        "train_loss": train_loss,
        "test_loss": empirical_loss(params, arch, test_data),
        "test_accuracy": evaluate_accuracy(params, arch, test_data),
    }


def run_experiment(
    clients: list[ClientDataset],
    arch: ModelArch,
    cfg: FederationConfig,
    rule: AggregationRule,
    test_data: ClientDataset | None = None,
) -> list[RoundRecord]:
    """Initialize, then run the configured number of rounds.

    The first record (round 0) captures the state right after initialization;
    one more record follows per round.
    """
    state = initialize(clients, arch, cfg, rule)
    records = [
        RoundRecord(
            round=0,
            selected=(),
            alpha=state.alpha.copy(),
            cached_losses=state.loss_cache.losses.copy(),
            aggregation_skipped=False,
            **_metrics(state.global_params, arch, clients, test_data, True),
        )
    ]
    for _ in range(cfg.rounds):
        state, record = run_round(state, clients, arch, cfg, rule, test_data)
        records.append(record)
    return records
