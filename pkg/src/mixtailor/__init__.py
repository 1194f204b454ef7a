"""Randomized robust gradient aggregation: rules, attacks, bounds and a training simulator."""

from .aggregators import (
    AggKind,
    AggregationOutcome,
    AggregatorSpec,
    PoolSpec,
    agg_bulyan,
    agg_coord_median,
    agg_generalized_krum,
    agg_geom_median,
    agg_mean,
    agg_mixtailor,
    agg_trimmed_mean,
    aggregate,
    build_default_pool,
    parse_aggregator,
    resample,
)
from .attacks import AdversaryView, AttackKind, AttackSpec, generate_attack, parse_attack, verify_attack
from .core import (
    ConfigurationError,
    DivergenceError,
    InvalidInputError,
    SeededRng,
    Stream,
    WorkerUpdate,
    pairwise_distances,
    pnorm,
)

__version__ = "0.1.0"

__all__ = [
    "AggKind", "AggregationOutcome", "AggregatorSpec", "PoolSpec", "agg_bulyan", "agg_coord_median",
    "agg_generalized_krum", "agg_geom_median", "agg_mean", "agg_mixtailor", "agg_trimmed_mean", "aggregate",
    "build_default_pool", "parse_aggregator", "resample",
    "AdversaryView", "AttackKind", "AttackSpec", "generate_attack", "parse_attack", "verify_attack",
    "ConfigurationError", "DivergenceError", "InvalidInputError", "SeededRng", "Stream", "WorkerUpdate",
    "pairwise_distances", "pnorm",
]
