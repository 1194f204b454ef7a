"""Single-process simulation of parameter-server training under attack."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from ..aggregators import AggKind, AggregatorSpec, PoolSpec, agg_mixtailor, aggregate
from ..attacks import AdversaryView, AttackCost, AttackSpec, generate_attack
from ..core import DivergenceError, SeededRng, Stream, fmt
from .config import ExperimentConfig
from .data import Dataset, PartitionSpec, make_dataset, partition_dataset, train_test_split
from .models import Model, build_model, local_gradient

CSV_HEADER = "iteration,chosen_member,attack_param,train_loss,test_accuracy,dot_clean,wall_clock_us"


@dataclass(frozen=True)
class RoundRecord:
    iteration: int
    chosen_member: int
    attack_param: float
    train_loss: float
    test_accuracy: float
    dot_clean: float
    wall_clock_us: float
    updates_received: int = 0  # diagnostic only, not written to CSV

    def csv_row(self) -> str:
        return ",".join([str(self.iteration), str(self.chosen_member), fmt(self.attack_param),
                         fmt(self.train_loss), fmt(self.test_accuracy), fmt(self.dot_clean),
                         fmt(self.wall_clock_us)])


def records_to_csv(records) -> str:
    return "\n".join([CSV_HEADER, *(r.csv_row() for r in records)]) + "\n"


@dataclass
class TrainingResult:
    records: list[RoundRecord]
    weights: np.ndarray
    model: Model
    train: Dataset
    test: Dataset


def train_model(config: ExperimentConfig) -> TrainingResult:
    """Train for ``config.iterations`` rounds, keeping the final weights.

    Workers ``0 .. f-1`` are Byzantine. Every source of randomness is a named
    stream derived from ``config.seed``, so identical configs give identical records.
    """
    cfg = config.validate()
    n, f, seed = cfg.n, cfg.f, cfg.seed

    data_rng = SeededRng(seed, Stream.DATA)
    full = make_dataset(cfg.dataset, SeededRng(seed, Stream.DATASET))
    train, test = train_test_split(full, data_rng)
    shard_idx = partition_dataset(train, PartitionSpec(cfg.partition, n), data_rng)
    shards = [train.subset(idx) for idx in shard_idx]

    model = build_model(cfg.model, full)
    w = model.init(SeededRng(seed, Stream.INIT), cfg.model.init_scale)
    worker_rngs = {i: SeededRng(seed, Stream.WORKER + i) for i in range(f, n)}
    server_rng = SeededRng(seed, Stream.POOL)
    attack_rng = SeededRng(seed, Stream.ATTACK)

    agg = cfg.aggregator
    is_pool = isinstance(agg, PoolSpec)
    pool_view = agg if is_pool else PoolSpec((agg,))
    silent = cfg.silent_byzantines
    schedule = cfg.schedule
    wd = cfg.model.weight_decay
    mu = cfg.momentum
    buf = np.zeros_like(w)
    cost = AttackCost()
    records: list[RoundRecord] = []

    # overflow is reported as DivergenceError below, not as numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(cfg.iterations):
            start = time.perf_counter_ns() if cfg.record_timing else 0
            honest = np.stack([local_gradient(model, w, shards[i], cfg.batch_size, worker_rngs[i])
                               for i in range(f, n)])
            if not np.all(np.isfinite(honest)):
                raise DivergenceError(t + 1)
            attack_param = 0.0
            if silent:
                panel = honest
            else:
                res = generate_attack(cfg.attack, AdversaryView(honest, pool_view, attack_rng), n, f, cost)
                panel = np.vstack([res.byzantine, honest])
                attack_param = float(res.param) if res.param is not None else 0.0
            if is_pool:
                out = agg_mixtailor(panel, agg, f, server_rng)
                chosen = out.chosen_member
            else:
                out = aggregate(agg, panel, f, server_rng)
                chosen = -1
            update = out.result
            buf = mu * buf + update
            w = w - schedule.rate(t) * (buf + wd * w)
            if not np.all(np.isfinite(w)):
                raise DivergenceError(t + 1)
            elapsed = (time.perf_counter_ns() - start) / 1000.0 if cfg.record_timing else 0.0

            if (t + 1) % cfg.eval_every == 0:
                clean = honest.mean(axis=0)
                records.append(RoundRecord(
                    iteration=t + 1,
                    chosen_member=chosen,
                    attack_param=attack_param,
                    train_loss=model.loss(w, train.X, train.y),
                    test_accuracy=model.score(w, test),
                    dot_clean=float(update @ clean),
                    wall_clock_us=elapsed,
                    updates_received=panel.shape[0],
                ))
    return TrainingResult(records, w, model, train, test)


def run_experiment(config: ExperimentConfig) -> list[RoundRecord]:
    """One record per eval point; see :func:`train_model`."""
    return train_model(config).records


def run_omniscient_baseline(config: ExperimentConfig) -> list[RoundRecord]:
    """Average exactly the honest gradients each round (no attack, plain mean)."""
    return run_experiment(replace(config, attack=AttackSpec(), aggregator=AggregatorSpec(AggKind.MEAN)))


def final_accuracy(records) -> float:
    return records[-1].test_accuracy if records else float("nan")
