"""Wall-clock timing of aggregation rules on synthetic panels."""

from __future__ import annotations

import time
from dataclasses import dataclass

from ..aggregators import AggKind, AggregatorSpec, PoolSpec, agg_mixtailor, aggregate, validate_pool
from ..core import InvalidInputError, SeededRng, Stream


@dataclass(frozen=True)
class BenchRow:
    name: str
    mean_seconds: float


def default_bench_rules(pool: PoolSpec | None = None) -> dict[str, AggregatorSpec | PoolSpec]:
    rules: dict[str, AggregatorSpec | PoolSpec] = {
        "mean": AggregatorSpec(AggKind.MEAN),
        "comed": AggregatorSpec(AggKind.COORD_MEDIAN),
        "krum": AggregatorSpec(AggKind.KRUM),
        "bulyan": AggregatorSpec(AggKind.BULYAN),
    }
    if pool is not None:
        rules["mixtailor"] = pool
    return rules


def bench_aggregators(rules: dict[str, AggregatorSpec | PoolSpec] | PoolSpec | None, n: int, d: int,
                      repeats: int, f: int = 2, seed: int = 0) -> list[BenchRow]:
    """Mean seconds per call for each rule on fresh Gaussian ``(n, d)`` panels.

    A bare :class:`PoolSpec` is benchmarked alongside mean/comed/Krum/Bulyan.
    Each rule sees the same sequence of panels; one untimed warm-up call precedes timing.
    """
    if repeats < 10:
        raise InvalidInputError("repeats must be >= 10")
    if rules is None or isinstance(rules, PoolSpec):
        rules = default_bench_rules(rules)
    for spec in rules.values():
        validate_pool(spec, n, f)
    panels = SeededRng(seed, Stream.DATA).standard_normal((repeats + 1, n, d))
    rows = []
    for name, spec in rules.items():
        server = SeededRng(seed, Stream.POOL)
        if isinstance(spec, PoolSpec):
            def call(panel, spec=spec):
                return agg_mixtailor(panel, spec, f, server)
        else:
            def call(panel, spec=spec):
                return aggregate(spec, panel, f, server)
        call(panels[0])
        total = 0.0
        for r in range(1, repeats + 1):
            t0 = time.perf_counter()
            call(panels[r])
            total += time.perf_counter() - t0
        rows.append(BenchRow(name, total / repeats))
    return rows


def format_bench(rows: list[BenchRow]) -> str:
    lines = ["aggregator,mean_us"]
    lines += [f"{r.name},{r.mean_seconds * 1e6:.1f}" for r in rows]
    order = sorted(rows, key=lambda r: r.mean_seconds)
    lines.append("ordering: " + " < ".join(r.name for r in order))
    return "\n".join(lines) + "\n"
