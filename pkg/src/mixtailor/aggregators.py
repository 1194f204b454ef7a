"""Robust aggregation rules and the randomized MixTailor pool.

Every rule maps an ``(n, d)`` panel of worker updates to one ``d``-vector.
Rules that need the Byzantine budget ``f`` take it at call time; ``p`` and
the Bulyan phase rules are part of the :class:`AggregatorSpec`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    ConfigurationError,
    InvalidInputError,
    SeededRng,
    Stream,
    _row_pnorms,
    as_panel,
    pairwise_distances,
)

__all__ = [
    "AggKind",
    "AggregatorSpec",
    "PoolSpec",
    "AggregationOutcome",
    "agg_mean",
    "agg_coord_median",
    "agg_trimmed_mean",
    "krum_scores",
    "krum_neighbors",
    "agg_generalized_krum",
    "agg_geom_median",
    "bulyan_selection",
    "agg_bulyan",
    "resample_assignment",
    "resample",
    "aggregate",
    "agg_mixtailor",
    "validate_pool",
    "build_default_pool",
    "parse_aggregator",
    "parse_kv",
]

WEISZFELD_NU = 1e-8
WEISZFELD_TOL = 1e-7
WEISZFELD_MAX_ITERS = 100


class AggKind(str, enum.Enum):
    MEAN = "mean"
    COORD_MEDIAN = "comed"
    TRIMMED_MEAN = "trimmed_mean"
    KRUM = "krum"
    GEOM_MEDIAN = "geomed"
    BULYAN = "bulyan"


_ALIASES = {
    "mean": AggKind.MEAN,
    "avg": AggKind.MEAN,
    "average": AggKind.MEAN,
    "fedavg": AggKind.MEAN,
    "comed": AggKind.COORD_MEDIAN,
    "median": AggKind.COORD_MEDIAN,
    "coord_median": AggKind.COORD_MEDIAN,
    "coordmedian": AggKind.COORD_MEDIAN,
    "trimmed_mean": AggKind.TRIMMED_MEAN,
    "trimmed": AggKind.TRIMMED_MEAN,
    "trimmedmean": AggKind.TRIMMED_MEAN,
    "krum": AggKind.KRUM,
    "generalized_krum": AggKind.KRUM,
    "generalizedkrum": AggKind.KRUM,
    "geomed": AggKind.GEOM_MEDIAN,
    "geometric_median": AggKind.GEOM_MEDIAN,
    "geommedian": AggKind.GEOM_MEDIAN,
    "gm": AggKind.GEOM_MEDIAN,
    "bulyan": AggKind.BULYAN,
}

_PHASE_KINDS = {
    AggKind.MEAN,
    AggKind.COORD_MEDIAN,
    AggKind.TRIMMED_MEAN,
    AggKind.KRUM,
    AggKind.GEOM_MEDIAN,
}


def _kind(value) -> AggKind:
    if isinstance(value, AggKind):
        return value
    try:
        return _ALIASES[str(value).strip().lower()]
    except KeyError:
        raise InvalidInputError(f"unknown aggregator kind {value!r}") from None


@dataclass(frozen=True)
class AggregatorSpec:
    """Description of one deterministic aggregation rule.

    ``p`` is used by generalized Krum (and Krum phases of Bulyan); other rules
    carry it only as a label. ``trim_f=None`` means "use the call-time f".
    ``resample_s > 1`` homogenises the panel before the rule runs.
    """

    kind: AggKind
    p: float = 2.0
    trim_f: int | None = None
    select: "AggregatorSpec | None" = None
    aggregate: "AggregatorSpec | None" = None
    resample_s: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", _kind(self.kind))
        if not np.isfinite(self.p) or self.p < 1:
            raise ConfigurationError(f"p must be >= 1, got {self.p}")
        if self.resample_s < 1:
            raise ConfigurationError(f"resample_s must be >= 1, got {self.resample_s}")
        if self.trim_f is not None and self.trim_f < 0:
            raise ConfigurationError("trim_f must be nonnegative")
        if self.kind is AggKind.BULYAN:
            if self.select is None:
                object.__setattr__(self, "select", AggregatorSpec(AggKind.KRUM, p=self.p))
            if self.aggregate is None:
                object.__setattr__(self, "aggregate", AggregatorSpec(AggKind.MEAN, p=self.p))
            for phase in (self.select, self.aggregate):
                if phase.kind not in _PHASE_KINDS:
                    raise ConfigurationError("Bulyan phase rules cannot be Bulyan or MixTailor")
                if phase.resample_s != 1:
                    raise ConfigurationError("Bulyan phase rules cannot resample")
        elif self.select is not None or self.aggregate is not None:
            raise ConfigurationError(f"{self.kind.value} takes no phase rules")

    @property
    def name(self) -> str:
        base = self.kind.value
        if self.kind is AggKind.BULYAN:
            base += f"[{self.select.kind.value}/{self.aggregate.kind.value}]"
        parts = []
        if self.kind in (AggKind.KRUM, AggKind.BULYAN, AggKind.GEOM_MEDIAN, AggKind.COORD_MEDIAN):
            parts.append(f"p={self.p:.4g}")
        if self.trim_f is not None:
            parts.append(f"trim={self.trim_f}")
        if self.resample_s > 1:
            parts.append(f"s={self.resample_s}")
        return base + (f"({','.join(parts)})" if parts else "")

    def with_resampling(self, s: int) -> "AggregatorSpec":
        return AggregatorSpec(self.kind, self.p, self.trim_f, self.select, self.aggregate, s)

    def check_feasible(self, n: int, f: int) -> None:
        """Raise :class:`ConfigurationError` if the rule cannot run on ``n`` updates with budget ``f``."""
        if n < 1:
            raise ConfigurationError("need at least one update")
        if f < 0:
            raise ConfigurationError("f must be nonnegative")
        if self.kind is AggKind.TRIMMED_MEAN:
            t = f if self.trim_f is None else self.trim_f
            if n <= 2 * t:
                raise ConfigurationError(f"trimmed mean needs n > 2*trim_f ({n} <= {2 * t})")
        elif self.kind is AggKind.KRUM:
            if n <= 2 * f + 2:
                raise ConfigurationError(f"generalized Krum needs n > 2f+2 ({n} <= {2 * f + 2})")
        elif self.kind is AggKind.BULYAN:
            if n < 4 * f + 3:
                raise ConfigurationError(f"Bulyan needs n >= 4f+3 ({n} < {4 * f + 3})")
            beta = n - 4 * f
            agg = self.aggregate
            if agg.kind is AggKind.TRIMMED_MEAN and agg.trim_f and beta <= 2 * agg.trim_f:
                raise ConfigurationError("Bulyan aggregation window too small for its trimmed mean")


@dataclass(frozen=True)
class PoolSpec:
    """Ordered pool of rules; MixTailor draws each with probability 1/M."""

    members: tuple[AggregatorSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if not self.members:
            raise ConfigurationError("a pool needs at least one member")
        for m in self.members:
            if not isinstance(m, AggregatorSpec):
                raise ConfigurationError(f"pool member {m!r} is not an AggregatorSpec")

    def __len__(self) -> int:
        return len(self.members)

    def describe(self) -> list[str]:
        return [m.name for m in self.members]

    def with_resampling(self, s: int) -> "PoolSpec":
        return PoolSpec(tuple(m.with_resampling(s) for m in self.members))


@dataclass
class AggregationOutcome:
    result: np.ndarray
    chosen_member: int = 0
    selected_worker: int | None = None


def _panel(updates) -> np.ndarray:
    panel = as_panel(updates)
    if not np.all(np.isfinite(panel)):
        raise InvalidInputError("non-finite entries in update panel")
    return panel


def agg_mean(updates) -> np.ndarray:
    return _panel(updates).mean(axis=0)


def agg_coord_median(updates) -> np.ndarray:
    # a full sort along the worker axis is faster than np.median for short, wide panels
    ordered = np.sort(_panel(updates), axis=0)
    n = ordered.shape[0]
    if n % 2:
        return ordered[n // 2].copy()
    return (ordered[n // 2 - 1] + ordered[n // 2]) / 2.0


def agg_trimmed_mean(updates, trim_f: int) -> np.ndarray:
    panel = _panel(updates)
    n = panel.shape[0]
    if trim_f < 0 or n <= 2 * trim_f:
        raise InvalidInputError(f"trimmed mean needs n > 2*trim_f, got n={n}, trim_f={trim_f}")
    # sorted values summed row by row in a fixed order: exactly permutation invariant, and
    # independent of numpy's shape-dependent pairwise summation
    ordered = np.sort(panel, axis=0)
    total = ordered[trim_f].copy()
    for row in ordered[trim_f + 1:n - trim_f]:
        total += row
    return total / (n - 2 * trim_f)


def _neighbor_order(dist: np.ndarray) -> np.ndarray:
    """Per row, the other workers sorted by (distance, index)."""
    n = dist.shape[0]
    d = dist.astype(np.float64, copy=True)
    np.fill_diagonal(d, np.inf)
    order = np.argsort(d, axis=1, kind="stable")
    return order[:, : n - 1]


def _krum_from_distances(dist: np.ndarray, k: int) -> tuple[int, np.ndarray]:
    order = _neighbor_order(dist)[:, :k]
    sq = np.take_along_axis(dist, order, axis=1) ** 2
    scores = sq.sum(axis=1)
    return int(np.argmin(scores)), scores


def krum_neighbors(updates, p: float, f: int) -> np.ndarray:
    """Indices of the ``n-f-2`` closest other workers for every worker, shape ``(n, n-f-2)``."""
    panel = _panel(updates)
    n = panel.shape[0]
    if n <= 2 * f + 2:
        raise InvalidInputError(f"generalized Krum needs n > 2f+2, got n={n}, f={f}")
    return _neighbor_order(pairwise_distances(panel, p))[:, : n - f - 2]


def krum_scores(updates, p: float, f: int) -> np.ndarray:
    """Sum of squared l_p distances to the ``n-f-2`` closest other workers."""
    panel = _panel(updates)
    n = panel.shape[0]
    if n <= 2 * f + 2:
        raise InvalidInputError(f"generalized Krum needs n > 2f+2, got n={n}, f={f}")
    return _krum_from_distances(pairwise_distances(panel, p), n - f - 2)[1]


def agg_generalized_krum(updates, p: float, f: int) -> AggregationOutcome:
    """Select the single worker with the smallest l_p Krum score (ties: lowest index)."""
    panel = _panel(updates)
    n = panel.shape[0]
    if n <= 2 * f + 2:
        raise InvalidInputError(f"generalized Krum needs n > 2f+2, got n={n}, f={f}")
    idx, _ = _krum_from_distances(pairwise_distances(panel, p), n - f - 2)
    return AggregationOutcome(panel[idx].copy(), 0, idx)


def agg_geom_median(updates, tol: float = WEISZFELD_TOL, max_iters: int = WEISZFELD_MAX_ITERS,
                    nu: float = WEISZFELD_NU) -> np.ndarray:
    """Smoothed Weiszfeld iteration for ``argmin_z sum_i ||z - u_i||_2``, started at the mean."""
    if tol <= 0:
        raise InvalidInputError("tol must be positive")
    panel = _panel(updates)
    z = panel.mean(axis=0)
    if panel.shape[0] == 1:
        return z
    for _ in range(max_iters):
        dist = _row_pnorms(panel - z, 2.0)
        w = 1.0 / np.maximum(dist, nu)
        z_new = (w @ panel) / w.sum()
        step = float(np.linalg.norm(z_new - z))
        z = z_new
        if step < tol:
            break
    return z


def _geom_median_columns(window: np.ndarray, tol: float = WEISZFELD_TOL,
                         max_iters: int = WEISZFELD_MAX_ITERS, nu: float = WEISZFELD_NU) -> np.ndarray:
    """One-dimensional smoothed Weiszfeld run independently on every column."""
    z = window.mean(axis=0)
    for _ in range(max_iters):
        w = 1.0 / np.maximum(np.abs(window - z), nu)
        z_new = (w * window).sum(axis=0) / w.sum(axis=0)
        step = float(np.max(np.abs(z_new - z), initial=0.0))
        z = z_new
        if step < tol:
            break
    return z


def _krum_columns(window: np.ndarray) -> np.ndarray:
    """Per-column 1-D Krum with budget 0 (``m-2`` neighbours)."""
    m = window.shape[0]
    if m <= 2:
        return window[0].copy()
    diff = np.abs(window[:, None, :] - window[None, :, :])
    idx = np.arange(m)
    diff[idx, idx, :] = np.inf
    diff.sort(axis=1)
    scores = (diff[:, : m - 2, :] ** 2).sum(axis=1)
    pick = np.argmin(scores, axis=0)
    return np.take_along_axis(window, pick[None, :], axis=0)[0]


def _apply_select(spec: AggregatorSpec, sub: np.ndarray, f: int, dist: np.ndarray | None) -> np.ndarray:
    """Run a selection-phase rule on the shrinking candidate set."""
    m = sub.shape[0]
    if m == 1:
        return sub[0]
    kind = spec.kind
    if kind is AggKind.KRUM:
        # candidate sets shrink below 2f+3 late in the loop; keep at least one neighbour
        k = min(max(m - f - 2, 1), m - 1)
        if dist is None:
            dist = pairwise_distances(sub, spec.p)
        return sub[_krum_from_distances(dist, k)[0]]
    if kind is AggKind.MEAN:
        return sub.mean(axis=0)
    if kind is AggKind.COORD_MEDIAN:
        return agg_coord_median(sub)
    if kind is AggKind.GEOM_MEDIAN:
        return agg_geom_median(sub)
    if kind is AggKind.TRIMMED_MEAN:
        t = f if spec.trim_f is None else spec.trim_f
        return agg_trimmed_mean(sub, min(t, (m - 1) // 2))
    raise ConfigurationError(f"{kind.value} cannot be a Bulyan phase rule")


def bulyan_selection(updates, f: int, select: AggregatorSpec) -> list[int]:
    """Indices chosen by Bulyan's iterative selection phase, in selection order.

    Each round runs ``select`` on the remaining candidates and moves the
    candidate closest (l_2) to its output into the selected set, ``n - 2f`` times.
    """
    panel = _panel(updates)
    n = panel.shape[0]
    if n < 4 * f + 3:
        raise InvalidInputError(f"Bulyan needs n >= 4f+3, got n={n}, f={f}")
    theta = n - 2 * f
    full_dist = pairwise_distances(panel, select.p) if select.kind is AggKind.KRUM and n > 1 else None
    candidates = list(range(n))
    selected: list[int] = []
    for _ in range(theta):
        sub = panel[candidates]
        dist = full_dist[np.ix_(candidates, candidates)] if full_dist is not None else None
        out = _apply_select(select, sub, f, dist)
        j = int(np.argmin(_row_pnorms(sub - out, 2.0)))
        selected.append(candidates.pop(j))
    return selected


def _apply_window(spec: AggregatorSpec, window: np.ndarray) -> np.ndarray:
    kind = spec.kind
    if kind is AggKind.MEAN:
        return window.mean(axis=0)
    if kind is AggKind.COORD_MEDIAN:
        return agg_coord_median(window)
    if kind is AggKind.TRIMMED_MEAN:
        return agg_trimmed_mean(window, spec.trim_f or 0)
    if kind is AggKind.GEOM_MEDIAN:
        return _geom_median_columns(window)
    if kind is AggKind.KRUM:
        return _krum_columns(window)
    raise ConfigurationError(f"{kind.value} cannot be a Bulyan phase rule")


def agg_bulyan(updates, f: int, select: AggregatorSpec | None = None,
               aggregate: AggregatorSpec | None = None) -> np.ndarray:
    """Bulyan: iterative selection of ``n-2f`` updates, then a per-coordinate rule
    over the ``n-4f`` selected values closest to the coordinate median."""
    select = select or AggregatorSpec(AggKind.KRUM)
    aggregate = aggregate or AggregatorSpec(AggKind.MEAN)
    panel = _panel(updates)
    chosen = panel[bulyan_selection(panel, f, select)]
    theta = chosen.shape[0]
    beta = theta - 2 * f
    med = agg_coord_median(chosen)
    order = np.argsort(np.abs(chosen - med), axis=0, kind="stable")[:beta]
    window = np.take_along_axis(chosen, order, axis=0)
    return _apply_window(aggregate, window)


def resample_assignment(n: int, s: int, rng: SeededRng) -> np.ndarray:
    """An ``(n, s)`` index matrix in which every input index appears exactly ``s`` times.

    Equivalent in distribution to drawing ``n*s`` indices and rejecting any draw
    that uses an input more than ``s`` times.
    """
    slots = np.repeat(np.arange(n), s)
    return rng.permutation(slots).reshape(n, s)


def resample(updates, s: int, rng: SeededRng | None) -> np.ndarray:
    """Replace each update by the average of ``s`` updates (each input used at most ``s`` times)."""
    panel = _panel(updates)
    if s < 1:
        raise InvalidInputError("s must be >= 1")
    if s == 1:
        return panel.copy()
    if rng is None:
        raise InvalidInputError("resampling needs a random stream")
    idx = resample_assignment(panel.shape[0], s, rng)
    return panel[idx].mean(axis=1)


def aggregate(spec: AggregatorSpec, updates, f: int, rng: SeededRng | None = None) -> AggregationOutcome:
    """Apply one deterministic rule (after optional resampling)."""
    panel = _panel(updates)
    if spec.resample_s > 1:
        panel = resample(panel, spec.resample_s, rng)
    kind = spec.kind
    if kind is AggKind.MEAN:
        return AggregationOutcome(agg_mean(panel))
    if kind is AggKind.COORD_MEDIAN:
        return AggregationOutcome(agg_coord_median(panel))
    if kind is AggKind.TRIMMED_MEAN:
        return AggregationOutcome(agg_trimmed_mean(panel, f if spec.trim_f is None else spec.trim_f))
    if kind is AggKind.KRUM:
        return agg_generalized_krum(panel, spec.p, f)
    if kind is AggKind.GEOM_MEDIAN:
        return AggregationOutcome(agg_geom_median(panel))
    if kind is AggKind.BULYAN:
        return AggregationOutcome(agg_bulyan(panel, f, spec.select, spec.aggregate))
    raise ConfigurationError(f"unsupported aggregator {kind}")


def validate_pool(pool: PoolSpec | AggregatorSpec, n: int, f: int) -> None:
    """Fail fast if any member cannot run on ``n`` updates with budget ``f``."""
    members = pool.members if isinstance(pool, PoolSpec) else (pool,)
    for i, m in enumerate(members):
        try:
            m.check_feasible(n, f)
        except ConfigurationError as exc:
            raise ConfigurationError(f"pool member {i} ({m.name}): {exc}") from None


def agg_mixtailor(updates, pool: PoolSpec, f: int, rng: SeededRng) -> AggregationOutcome:
    """Draw one member uniformly with the server stream and apply it."""
    m = int(rng.integers(len(pool.members)))
    out = aggregate(pool.members[m], updates, f, rng)
    out.chosen_member = m
    return out


BASE_KINDS = (AggKind.KRUM, AggKind.MEAN, AggKind.GEOM_MEDIAN, AggKind.COORD_MEDIAN)
POOL_CLASSES = (AggKind.COORD_MEDIAN, AggKind.KRUM, AggKind.GEOM_MEDIAN, AggKind.BULYAN)


def build_default_pool(rng: SeededRng, per_class: int = 16, exclude: Sequence = (),
                     p_range: tuple[float, float] = (1.0, 16.0), resample_s: int = 1) -> PoolSpec:
    """The 4-class pool: comed, generalized Krum, geometric median and Bulyan variants.

    Each member gets its own ``p`` drawn uniformly from ``p_range``. Bulyan members
    cycle their (select, aggregate) pair over Krum/Mean/GeomMedian/CoordMedian.
    """
    excluded = {_kind(k) for k in exclude}
    members = []
    for cls in POOL_CLASSES:
        ps = rng.uniform(p_range[0], p_range[1], size=per_class)
        if cls in excluded:
            continue
        for j, p in enumerate(ps):
            p = float(p)
            if cls is AggKind.BULYAN:
                sel = BASE_KINDS[(j // 4) % 4]
                agg = BASE_KINDS[j % 4]
                spec = AggregatorSpec(cls, p=p, select=AggregatorSpec(sel, p=p),
                                      aggregate=AggregatorSpec(agg, p=p), resample_s=resample_s)
            else:
                spec = AggregatorSpec(cls, p=p, resample_s=resample_s)
            members.append(spec)
    return PoolSpec(tuple(members))


def parse_kv(text: str) -> dict[str, str]:
    """Parse ``"kind k1=v1 k2=v2"`` (whitespace or ';' separated); a bare first token is the kind."""
    tokens = text.replace(";", " ").split()
    out: dict[str, str] = {}
    for i, tok in enumerate(tokens):
        if "=" not in tok:
            if i == 0:
                out["kind"] = tok
                continue
            raise InvalidInputError(f"expected key=value, got {tok!r}")
        key, value = tok.split("=", 1)
        key = key.strip().lower()
        if key in out:
            raise InvalidInputError(f"duplicate key {key!r}")
        out[key] = value.strip()
    if "kind" not in out:
        raise InvalidInputError(f"no kind given in {text!r}")
    return out


def parse_aggregator(text: str, seed: int | None = None) -> AggregatorSpec | PoolSpec:
    """Build a rule or pool from a descriptor string.

    Examples: ``"krum p=3"``, ``"kind=bulyan select=krum aggregate=mean"``,
    ``"mixtailor"`` (default 64-member pool, needs ``seed``), ``"mixtailor members=comed,krum"``,
    ``"mixtailor exclude=bulyan resample=2"``.
    """
    kv = parse_kv(text)
    kind = kv.pop("kind").lower()
    try:
        p = float(kv.pop("p", 2.0))
        s = int(kv.pop("resample", kv.pop("s", 1)))
        trim = kv.pop("trim", kv.pop("trim_f", None))
        trim = None if trim is None else int(trim)
        if kind in ("mixtailor", "mix", "pool"):
            members = kv.pop("members", None)
            exclude = [e for e in kv.pop("exclude", "").split(",") if e]
            per_class = int(kv.pop("per_class", 16))
            if kv:
                raise InvalidInputError(f"unknown keys for mixtailor: {sorted(kv)}")
            if members:
                return PoolSpec(tuple(AggregatorSpec(_kind(k), p=p, trim_f=trim, resample_s=s)
                                      for k in members.split(",") if k))
            if seed is None:
                raise InvalidInputError("the default pool needs a seed")
            return build_default_pool(SeededRng(seed, Stream.POOL_BUILD), per_class=per_class,
                                    exclude=exclude, resample_s=s)
        select = kv.pop("select", None)
        agg = kv.pop("aggregate", None)
        if kv:
            raise InvalidInputError(f"unknown keys: {sorted(kv)}")
        k = _kind(kind)
        if k is AggKind.BULYAN:
            return AggregatorSpec(k, p=p, trim_f=trim, resample_s=s,
                                  select=AggregatorSpec(_kind(select or "krum"), p=p),
                                  aggregate=AggregatorSpec(_kind(agg or "mean"), p=p))
        if select or agg:
            raise InvalidInputError("select/aggregate only apply to bulyan")
        return AggregatorSpec(k, p=p, trim_f=trim, resample_s=s)
    except ValueError as exc:
        if isinstance(exc, (InvalidInputError, ConfigurationError)):
            raise
        raise InvalidInputError(f"bad aggregator descriptor {text!r}: {exc}") from None
