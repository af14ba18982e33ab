"""Experiment runner: JSON config in, CSV/JSON metrics out.

A config file describes one experiment end to end (data, partition,
corruption, model, training, aggregation rule, seeds). ``run`` executes it
and writes ``rounds.csv``, ``weights.csv`` and ``summary.json`` into the
output directory; ``sweep`` repeats the run over a grid of weighting
strengths with shared data and corruption. All outputs are byte-identical
across repeated runs of the same config.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .aggregate import AggregationRule
from .corrupt import CorruptionSpec, apply_corruption
from .datagen import (
    PartitionSpec,
    SyntheticSpec,
    generate_synthetic,
    load_csv,
    partition_dirichlet,
    partition_iid,
    scale_to_unit_interval,
    split_train_test,
)
from .datasets import ClientDataset, Dataset, as_client
from .federation import FederationConfig, RoundRecord, run_experiment
from .model import ModelArch, TrainConfig


class ConfigError(ValueError):
    """Invalid experiment config; the message names the offending key."""


@dataclass(frozen=True)
class Seeds:
    data: int
    corruption: int
    training: int


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    hidden_dim: int | None = None


@dataclass(frozen=True)
class DataConfig:
    partition: PartitionSpec
    synthetic: SyntheticSpec | None = None
    csv_path: str | None = None
    test_fraction: float = 0.2


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig
    model: ModelSpec
    train: TrainConfig
    rule: AggregationRule
    corruption: CorruptionSpec
    seeds: Seeds
    rounds: int
    clients_per_round: int
    lambda_multiple: float = 1.0
    eval_interval: int = 1
    parallel: bool = False
    output_dir: str = "results"


@dataclass
class ExperimentResult:
    """In-memory outcome of one experiment run."""

    records: list[RoundRecord]
    config: ExperimentConfig
    arch: ModelArch
    lam: float
    sample_counts: list[int]
    corrupted_clients: list[int]
    elapsed_seconds: float

    @property
    def num_clients(self) -> int:
        return len(self.sample_counts)

    @property
    def final(self) -> RoundRecord:
        return self.records[-1]


_REQUIRED = object()


def _expect(section: dict, path: str, key: str, kinds, default=_REQUIRED):
    if key not in section:
        if default is _REQUIRED:
            raise ConfigError(f"missing key '{path}{key}'")
        return default
    value = section[key]
    if value is None and default is not _REQUIRED:
        return default
    if not isinstance(value, kinds) or isinstance(value, bool) and bool not in _as_tuple(kinds):
        raise ConfigError(f"key '{path}{key}' has wrong type {type(value).__name__}")
    return value


def _as_tuple(kinds):
    return kinds if isinstance(kinds, tuple) else (kinds,)


def _check_known(section: dict, path: str, allowed: set[str]) -> None:
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown key '{path}{key}'")


def _subsection(raw: dict, path: str, key: str, required: bool = True) -> dict | None:
    if key not in raw or raw[key] is None:
        if required:
            raise ConfigError(f"missing key '{path}{key}'")
        return None
    if not isinstance(raw[key], dict):
        raise ConfigError(f"key '{path}{key}' must be an object")
    return raw[key]


def _wrap(path: str, builder, **kwargs):
    try:
        return builder(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid '{path}': {exc}") from exc


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    _check_known(
        raw,
        "",
        {
            "data", "model", "train", "rule", "corruption", "seeds", "rounds",
            "clients_per_round", "lambda_multiple", "eval_interval", "parallel",
            "output_dir",
        },
    )

    seeds_raw = _subsection(raw, "", "seeds")
    _check_known(seeds_raw, "seeds.", {"data", "corruption", "training"})
    seeds = Seeds(
        data=_expect(seeds_raw, "seeds.", "data", int),
        corruption=_expect(seeds_raw, "seeds.", "corruption", int),
        training=_expect(seeds_raw, "seeds.", "training", int),
    )

    data_raw = _subsection(raw, "", "data")
    _check_known(data_raw, "data.", {"synthetic", "csv_path", "partition", "test_fraction"})
    synth_raw = _subsection(data_raw, "data.", "synthetic", required=False)
    csv_path = _expect(data_raw, "data.", "csv_path", str, default=None)
    if (synth_raw is None) == (csv_path is None):
        raise ConfigError("exactly one of 'data.synthetic' and 'data.csv_path' must be set")
    synthetic = None
    if synth_raw is not None:
        _check_known(
            synth_raw,
            "data.synthetic.",
            {"kind", "num_classes", "samples_per_class", "input_dim", "class_separation"},
        )
        synthetic = _wrap(
            "data.synthetic",
            SyntheticSpec,
            kind=_expect(synth_raw, "data.synthetic.", "kind", str),
            num_classes=_expect(synth_raw, "data.synthetic.", "num_classes", int),
            samples_per_class=_expect(synth_raw, "data.synthetic.", "samples_per_class", int),
            input_dim=_expect(synth_raw, "data.synthetic.", "input_dim", int),
            class_separation=float(
                _expect(synth_raw, "data.synthetic.", "class_separation", (int, float))
            ),
            seed=seeds.data,
        )
    part_raw = _subsection(data_raw, "data.", "partition")
    _check_known(part_raw, "data.partition.", {"kind", "num_clients", "dirichlet_concentration"})
    partition = _wrap(
        "data.partition",
        PartitionSpec,
        kind=_expect(part_raw, "data.partition.", "kind", str),
        num_clients=_expect(part_raw, "data.partition.", "num_clients", int),
        dirichlet_concentration=float(
            _expect(part_raw, "data.partition.", "dirichlet_concentration", (int, float), default=0.5)
        ),
        seed=seeds.data,
    )
    test_fraction = float(_expect(data_raw, "data.", "test_fraction", (int, float), default=0.2))
    if not 0.0 <= test_fraction < 1.0:
        raise ConfigError("key 'data.test_fraction' must lie in [0, 1)")
    data_cfg = DataConfig(
        partition=partition, synthetic=synthetic, csv_path=csv_path, test_fraction=test_fraction
    )

    model_raw = _subsection(raw, "", "model")
    _check_known(model_raw, "model.", {"kind", "hidden_dim"})
    kind = _expect(model_raw, "model.", "kind", str)
    if kind not in ("logistic", "mlp"):
        raise ConfigError(f"key 'model.kind' must be 'logistic' or 'mlp', got {kind!r}")
    hidden = _expect(model_raw, "model.", "hidden_dim", int, default=None)
    if kind == "mlp" and (hidden is None or hidden < 1):
        raise ConfigError("key 'model.hidden_dim' must be a positive integer for mlp")
    model_spec = ModelSpec(kind=kind, hidden_dim=hidden)

    train_raw = _subsection(raw, "", "train")
    _check_known(train_raw, "train.", {"learning_rate", "local_epochs", "batch_size"})
    train = _wrap(
        "train",
        TrainConfig,
        learning_rate=float(_expect(train_raw, "train.", "learning_rate", (int, float))),
        local_epochs=_expect(train_raw, "train.", "local_epochs", int),
        batch_size=_expect(train_raw, "train.", "batch_size", int),
        seed=seeds.training,
    )

    rule_raw = _subsection(raw, "", "rule")
    _check_known(rule_raw, "rule.", {"kind", "rfa_epsilon", "rfa_max_iters", "mkrum_f", "mkrum_m"})
    rule = _wrap(
        "rule",
        AggregationRule,
        kind=_expect(rule_raw, "rule.", "kind", str),
        rfa_epsilon=float(_expect(rule_raw, "rule.", "rfa_epsilon", (int, float), default=1e-6)),
        rfa_max_iters=_expect(rule_raw, "rule.", "rfa_max_iters", int, default=100),
        mkrum_f=_expect(rule_raw, "rule.", "mkrum_f", int, default=None),
        mkrum_m=_expect(rule_raw, "rule.", "mkrum_m", int, default=None),
    )

    corr_raw = _subsection(raw, "", "corruption", required=False) or {}
    _check_known(corr_raw, "corruption.", {"scenario", "fraction", "noise_sigma"})
    corruption = _wrap(
        "corruption",
        CorruptionSpec,
        scenario=_expect(corr_raw, "corruption.", "scenario", str, default="clean"),
        fraction=float(_expect(corr_raw, "corruption.", "fraction", (int, float), default=0.0)),
        noise_sigma=float(_expect(corr_raw, "corruption.", "noise_sigma", (int, float), default=0.7)),
        seed=seeds.corruption,
    )

    rounds = _expect(raw, "", "rounds", int)
    if rounds < 0:
        raise ConfigError("key 'rounds' must be >= 0")
    clients_per_round = _expect(raw, "", "clients_per_round", int, default=partition.num_clients)
    if clients_per_round < 1:
        raise ConfigError("key 'clients_per_round' must be >= 1")
    lambda_multiple = float(_expect(raw, "", "lambda_multiple", (int, float), default=1.0))
    if lambda_multiple <= 0:
        raise ConfigError("key 'lambda_multiple' must be positive")
    eval_interval = _expect(raw, "", "eval_interval", int, default=1)
    if eval_interval < 1:
        raise ConfigError("key 'eval_interval' must be >= 1")
    parallel = _expect(raw, "", "parallel", bool, default=False)
    output_dir = _expect(raw, "", "output_dir", str, default="results")

    return ExperimentConfig(
        data=data_cfg,
        model=model_spec,
        train=train,
        rule=rule,
        corruption=corruption,
        seeds=seeds,
        rounds=rounds,
        clients_per_round=clients_per_round,
        lambda_multiple=lambda_multiple,
        eval_interval=eval_interval,
        parallel=parallel,
        output_dir=output_dir,
    )


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a JSON experiment config, applying defaults."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(raw)


def config_to_dict(config: ExperimentConfig) -> dict:
    """Fully resolved config (defaults applied) as a JSON-serializable dict."""
    synth = None
    if config.data.synthetic is not None:
        synth = asdict(config.data.synthetic)
        synth.pop("seed")
    partition = asdict(config.data.partition)
    partition.pop("seed")
    train = asdict(config.train)
    train.pop("seed")
    corruption = asdict(config.corruption)
    corruption.pop("seed")
    return {
        "data": {
            "synthetic": synth,
            "csv_path": config.data.csv_path,
            "partition": partition,
            "test_fraction": config.data.test_fraction,
        },
        "model": asdict(config.model),
        "train": train,
        "rule": asdict(config.rule),
        "corruption": corruption,
        "seeds": asdict(config.seeds),
        "rounds": config.rounds,
        "clients_per_round": config.clients_per_round,
        "lambda_multiple": config.lambda_multiple,
        "eval_interval": config.eval_interval,
        "parallel": config.parallel,
        "output_dir": config.output_dir,
    }


def serialize_config(config: ExperimentConfig) -> str:
    return json.dumps(config_to_dict(config), indent=2, sort_keys=True)


def _load_data(config: ExperimentConfig) -> Dataset:
    if config.data.synthetic is not None:
        return generate_synthetic(config.data.synthetic)
    return load_csv(config.data.csv_path)


def prepare_clients(
    config: ExperimentConfig,
) -> tuple[list[ClientDataset], ClientDataset | None, int]:
    """Data pipeline: load, unit-scale, split, partition, corrupt.

    Features are min-max scaled to [0, 1] before anything else so the noisy
    injector's domain assumption holds for every scenario. Returns the client
    list, the held-out test set (None when test_fraction is 0) and the class
    count.
    """
    full = scale_to_unit_interval(_load_data(config))
    num_classes = full.num_classes
    train, test = split_train_test(full, config.data.test_fraction, config.seeds.data)
    spec = config.data.partition
    if spec.kind == "iid_equal":
        clients = partition_iid(train, spec.num_clients, spec.seed)
    else:
        clients = partition_dirichlet(
            train, spec.num_clients, spec.dirichlet_concentration, spec.seed
        )
    clients = apply_corruption(clients, config.corruption, num_classes=num_classes)
    test_client = as_client(test, client_id=-1) if test.num_samples else None
    return clients, test_client, num_classes


def execute(config: ExperimentConfig) -> ExperimentResult:
    """Run one experiment in memory (no files written)."""
    started = time.perf_counter()
    clients, test_client, num_classes = prepare_clients(config)
    arch = ModelArch(
        kind=config.model.kind,
        input_dim=clients[0].input_dim,
        num_classes=num_classes,
        hidden_dim=config.model.hidden_dim,
    )
    total_samples = sum(c.num_samples for c in clients)
    lam = config.lambda_multiple * total_samples
    fed_cfg = FederationConfig(
        train=config.train,
        clients_per_round=config.clients_per_round,
        lam=lam,
        rounds=config.rounds,
        eval_interval=config.eval_interval,
        parallel=config.parallel,
    )
    records = run_experiment(clients, arch, fed_cfg, config.rule, test_client)
    return ExperimentResult(
        records=records,
        config=config,
        arch=arch,
        lam=lam,
        sample_counts=[c.num_samples for c in clients],
        corrupted_clients=[c.client_id for c in clients if c.is_corrupted],
        elapsed_seconds=time.perf_counter() - started,
    )


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_outputs(result: ExperimentResult, out_dir: Path) -> None:
    """Write rounds.csv, weights.csv and summary.json for one run."""
    out_dir.mkdir(parents=True, exist_ok=True)
    n = result.num_clients
    alpha_cols = [f"alpha_{i}" for i in range(n)]
    loss_cols = [f"loss_{i}" for i in range(n)]

    with (out_dir / "rounds.csv").open("w", encoding="utf-8", newline="\n") as handle:
        header = ["round", "selected", "aggregation_skipped", "train_loss", "test_loss",
                  "test_accuracy"] + alpha_cols + loss_cols
        handle.write(",".join(header) + "\n")
        for rec in result.records:
            row = [
                str(rec.round),
                ";".join(str(c) for c in rec.selected),
                str(int(rec.aggregation_skipped)),
                _fmt(rec.train_loss),
                _fmt(rec.test_loss),
                _fmt(rec.test_accuracy),
            ]
            row += [_fmt(a) for a in rec.alpha]
            row += [_fmt(l) for l in rec.cached_losses]
            handle.write(",".join(row) + "\n")

    with (out_dir / "weights.csv").open("w", encoding="utf-8", newline="\n") as handle:
        handle.write(",".join(["round"] + alpha_cols) + "\n")
        for rec in result.records:
            handle.write(",".join([str(rec.round)] + [_fmt(a) for a in rec.alpha]) + "\n")

    final = result.final
    summary = {
        "config": config_to_dict(result.config),
        "resolved": {
            "lambda": result.lam,
            "num_clients": n,
            "sample_counts": result.sample_counts,
            "total_train_samples": int(sum(result.sample_counts)),
            "corrupted_clients": result.corrupted_clients,
            "param_count": result.arch.param_count,
        },
        "final": {
            "round": final.round,
            "train_loss": final.train_loss,
            "test_loss": final.test_loss,
            "test_accuracy": final.test_accuracy,
            "alpha": [float(a) for a in final.alpha],
            "nonzero_weights": int(np.count_nonzero(final.alpha)),
        },
    }
    with (out_dir / "summary.json").open("w", encoding="utf-8", newline="\n") as handle:
        json.dump(summary, handle, indent=2, sort_keys=True)
        handle.write("\n")


def run(config: ExperimentConfig) -> Path:
    """Execute a config and write its outputs; returns the output directory."""
    result = execute(config)
    out_dir = Path(config.output_dir)
    write_outputs(result, out_dir)
    return out_dir


def sweep(config: ExperimentConfig, lambda_grid: list[float]) -> list[ExperimentResult]:
    """Run the experiment once per weighting-strength multiple.

    Data and corruption seeds are shared across grid points so only the
    weighting changes. Each point writes into ``<output_dir>/lambda_<mult>/``
    and a ``sweep.csv`` table (multiple, resolved strength, final accuracy,
    final weights) lands at the output root.
    """
    if not lambda_grid:
        raise ConfigError("lambda grid must be non-empty")
    if any(m <= 0 for m in lambda_grid):
        raise ConfigError("lambda grid entries must be positive")
    root = Path(config.output_dir)
    results = []
    for mult in lambda_grid:
        raw = config_to_dict(config)
        raw["lambda_multiple"] = mult
        raw["output_dir"] = str(root / f"lambda_{mult:g}")
        point = config_from_dict(raw)
        result = execute(point)
        write_outputs(result, Path(point.output_dir))
        results.append(result)

    root.mkdir(parents=True, exist_ok=True)
    n = results[0].num_clients
    with (root / "sweep.csv").open("w", encoding="utf-8", newline="\n") as handle:
        header = ["lambda_multiple", "lambda", "final_test_accuracy", "nonzero_weights"]
        header += [f"alpha_{i}" for i in range(n)]
        handle.write(",".join(header) + "\n")
        for mult, result in zip(lambda_grid, results):
            final = result.final
            row = [
                _fmt(mult),
                _fmt(result.lam),
                _fmt(final.test_accuracy),
                str(int(np.count_nonzero(final.alpha))),
            ]
            row += [_fmt(a) for a in final.alpha]
            handle.write(",".join(row) + "\n")
    return results


def _apply_overrides(raw: dict, overrides: list[str], output_dir: str | None) -> dict:
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or key not in ("data", "corruption", "training"):
            raise ConfigError(
                f"seed override must look like data|corruption|training=<int>, got {item!r}"
            )
        try:
            raw.setdefault("seeds", {})[key] = int(value)
        except ValueError as exc:
            raise ConfigError(f"seed override value for '{key}' must be an integer") from exc
    if output_dir is not None:
        raw["output_dir"] = output_dir
    return raw


def _parse_grid(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"invalid lambda grid {text!r}") from exc


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="arflsim",
        description="Deterministic federated-learning experiments with robust aggregation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one experiment config")
    sweep_p = sub.add_parser("sweep", help="run a weighting-strength sweep")
    for p in (run_p, sweep_p):
        p.add_argument("config", help="path to a JSON experiment config")
        p.add_argument("--output-dir", default=None, help="override config output_dir")
        p.add_argument(
            "--seed-override",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override one of the seeds: data=, corruption= or training=",
        )
    sweep_p.add_argument(
        "--lambda-grid",
        required=True,
        help="comma-separated positive multiples of the total sample count",
    )

    args = parser.parse_args(argv)
    try:
        text = Path(args.config).read_text(encoding="utf-8")
        raw = json.loads(text)
        raw = _apply_overrides(raw, args.seed_override, args.output_dir)
        config = config_from_dict(raw)
        if args.command == "run":
            out = run(config)
            print(f"wrote {out / 'rounds.csv'}, {out / 'weights.csv'}, {out / 'summary.json'}")
        else:
            grid = _parse_grid(args.lambda_grid)
            sweep(config, grid)
            print(f"wrote {Path(config.output_dir) / 'sweep.csv'} and per-point outputs")
    except (ConfigError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
