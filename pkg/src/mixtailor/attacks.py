"""Informed-adversary attack strategies.

All attacks see only an :class:`AdversaryView`: the honest gradients of the
current round, optionally the set of server rules, and the adversary's own
random stream. The server's pool-draw stream is never part of the view.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Sequence

import numpy as np

from .aggregators import AggKind, AggregatorSpec, PoolSpec, aggregate, parse_kv, validate_pool
from .core import ConfigurationError, InvalidInputError, SeededRng, as_panel

__all__ = [
    "AttackKind",
    "AttackSpec",
    "AdversaryView",
    "AttackCost",
    "AttackResult",
    "ADAPTIVE_EPSILONS",
    "DEFAULT_LAMBDA_GRID",
    "attack_epsilon_reverse",
    "attack_partial_knowledge",
    "attack_random_epsilon",
    "attack_adaptive",
    "attack_minmax_pool",
    "attack_a_little",
    "a_little_default_z",
    "verify_attack",
    "generate_attack",
    "estimate_flops",
    "parse_attack",
]

ADAPTIVE_EPSILONS = (0.1, 0.5, 1.0, 10.0)
DEFAULT_LAMBDA_GRID = tuple(float(x) for x in np.logspace(-2, 2, 25))


class AttackKind(str, enum.Enum):
    NONE = "none"
    EPSILON_REVERSE = "reverse"
    PARTIAL_KNOWLEDGE = "partial"
    RANDOM_EPSILON = "random"
    ADAPTIVE = "adaptive"
    MINMAX_POOL = "minmax"
    A_LITTLE = "alittle"


_ALIASES = {
    "none": AttackKind.NONE,
    "reverse": AttackKind.EPSILON_REVERSE,
    "epsilon_reverse": AttackKind.EPSILON_REVERSE,
    "epsilonreverse": AttackKind.EPSILON_REVERSE,
    "tailored": AttackKind.EPSILON_REVERSE,
    "partial": AttackKind.PARTIAL_KNOWLEDGE,
    "partial_knowledge": AttackKind.PARTIAL_KNOWLEDGE,
    "partialknowledge": AttackKind.PARTIAL_KNOWLEDGE,
    "random": AttackKind.RANDOM_EPSILON,
    "random_epsilon": AttackKind.RANDOM_EPSILON,
    "randomepsilon": AttackKind.RANDOM_EPSILON,
    "adaptive": AttackKind.ADAPTIVE,
    "minmax": AttackKind.MINMAX_POOL,
    "minmax_pool": AttackKind.MINMAX_POOL,
    "minmaxpool": AttackKind.MINMAX_POOL,
    "alittle": AttackKind.A_LITTLE,
    "a_little": AttackKind.A_LITTLE,
    "little": AttackKind.A_LITTLE,
}


def _attack_kind(value) -> AttackKind:
    if isinstance(value, AttackKind):
        return value
    try:
        return _ALIASES[str(value).strip().lower()]
    except KeyError:
        raise InvalidInputError(f"unknown attack kind {value!r}") from None


@dataclass(frozen=True)
class AttackSpec:
    kind: AttackKind = AttackKind.NONE
    epsilon: float | None = None
    epsilon_set: tuple[float, ...] = ()
    k: int | None = None
    z: float | None = None
    lambda_grid: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", _attack_kind(self.kind))
        object.__setattr__(self, "epsilon_set", tuple(float(e) for e in self.epsilon_set))
        if self.lambda_grid is not None:
            object.__setattr__(self, "lambda_grid", tuple(float(x) for x in self.lambda_grid))
        kind = self.kind
        if kind in (AttackKind.EPSILON_REVERSE, AttackKind.PARTIAL_KNOWLEDGE):
            if self.epsilon is None or not self.epsilon > 0:
                raise ConfigurationError(f"{kind.value} attack needs epsilon > 0")
        if kind in (AttackKind.RANDOM_EPSILON, AttackKind.ADAPTIVE) and not self.epsilon_set:
            raise ConfigurationError(f"{kind.value} attack needs a nonempty epsilon_set")
        if kind is AttackKind.MINMAX_POOL and self.lambda_grid is not None and not self.lambda_grid:
            raise ConfigurationError("minmax attack needs a nonempty lambda_grid")
        if kind is AttackKind.PARTIAL_KNOWLEDGE and self.k is None:
            raise ConfigurationError("partial-knowledge attack needs k")

    def check_feasible(self, n: int, f: int) -> None:
        if self.kind is AttackKind.PARTIAL_KNOWLEDGE and not (f < self.k <= n):
            raise ConfigurationError(f"partial knowledge needs f < k <= n (f={f}, k={self.k}, n={n})")

    @property
    def name(self) -> str:
        kind = self.kind
        if kind is AttackKind.EPSILON_REVERSE:
            return f"reverse(eps={self.epsilon:g})"
        if kind is AttackKind.PARTIAL_KNOWLEDGE:
            return f"partial(eps={self.epsilon:g},k={self.k})"
        if kind in (AttackKind.RANDOM_EPSILON, AttackKind.ADAPTIVE):
            return f"{kind.value}({','.join(f'{e:g}' for e in self.epsilon_set)})"
        if kind is AttackKind.A_LITTLE:
            return "alittle" if self.z is None else f"alittle(z={self.z:g})"
        return kind.value


@dataclass
class AdversaryView:
    """What the adversary knows in one round."""

    honest_gradients: np.ndarray
    pool: PoolSpec | None = None
    rng: SeededRng | None = None

    def __post_init__(self):
        if len(self.honest_gradients) == 0:
            raise InvalidInputError("adversary view holds no honest gradients")
        self.honest_gradients = as_panel(self.honest_gradients)


@dataclass
class AttackCost:
    """Counters for the work an attack spends verifying candidates."""

    aggregator_evaluations: int = 0
    elementary_flops_estimate: int = 0

    def charge(self, spec: AggregatorSpec, n: int, d: int) -> None:
        self.aggregator_evaluations += 1
        self.elementary_flops_estimate += estimate_flops(spec, n, d)


@dataclass
class AttackResult:
    byzantine: np.ndarray
    param: float | None = None
    simulated_member: int | None = None
    dot: float | None = None


def estimate_flops(spec: AggregatorSpec, n: int, d: int) -> int:
    """Order-of-magnitude operation count for one application of ``spec``."""
    logn = max(1.0, math.log2(max(n, 2)))
    kind = spec.kind
    if kind is AggKind.MEAN:
        base = n * d
    elif kind in (AggKind.COORD_MEDIAN, AggKind.TRIMMED_MEAN):
        base = n * d * logn
    elif kind is AggKind.KRUM:
        base = n * n * d
    elif kind is AggKind.GEOM_MEDIAN:
        base = 10 * n * d
    else:
        theta = max(n - 2, 1)
        base = theta * estimate_flops(spec.select, n, d) + n * d * logn
    if spec.resample_s > 1:
        base += n * spec.resample_s * d
    return int(base)


def _honest_mean(view: AdversaryView) -> np.ndarray:
    return view.honest_gradients.mean(axis=0)


def attack_epsilon_reverse(view: AdversaryView, f: int, epsilon: float) -> np.ndarray:
    """``f`` copies of ``-epsilon * mean(honest)``."""
    if not epsilon > 0:
        raise InvalidInputError("epsilon must be positive")
    if f < 0:
        raise InvalidInputError("f must be nonnegative")
    g = _honest_mean(view)
    return np.tile(-epsilon * g, (f, 1))


def attack_partial_knowledge(view_k: AdversaryView, n: int, f: int, epsilon: float) -> np.ndarray:
    """Reverse attack when only ``k - f`` honest gradients are known.

    The ``n - k`` unseen honest slots are filled with the mean of the known ones
    and the reverse direction is taken against that filled panel.
    """
    known = view_k.honest_gradients
    k = f + known.shape[0]
    if known.shape[0] < 1:
        raise InvalidInputError("partial-knowledge attack needs k > f")
    if k > n:
        raise InvalidInputError(f"k={k} exceeds n={n}")
    fill = known.mean(axis=0)
    filled = np.vstack([known, np.tile(fill, (n - k, 1))]) if n > k else known
    return attack_epsilon_reverse(AdversaryView(filled), f, epsilon)


def attack_random_epsilon(view: AdversaryView, f: int, epsilon_set: Sequence[float],
                          rng: SeededRng | None = None) -> tuple[np.ndarray, float]:
    if len(epsilon_set) == 0:
        raise InvalidInputError("epsilon_set is empty")
    rng = rng or view.rng
    if rng is None:
        raise InvalidInputError("random-epsilon attack needs the adversary stream")
    eps = float(epsilon_set[int(rng.integers(len(epsilon_set)))])
    return attack_epsilon_reverse(view, f, eps), eps


def _simulate_dot(spec: AggregatorSpec, byzantine: np.ndarray, honest: np.ndarray, f: int,
                  direction: np.ndarray, rng: SeededRng | None, cost: AttackCost | None) -> float:
    panel = np.vstack([byzantine, honest]) if len(byzantine) else honest
    out = aggregate(spec, panel, f, rng).result
    if cost is not None:
        cost.charge(spec, panel.shape[0], panel.shape[1])
    return float(out @ direction)


def attack_adaptive(view: AdversaryView, f: int, epsilon_set: Sequence[float], n: int,
                    cost: AttackCost | None = None) -> tuple[np.ndarray, float, int]:
    """Pick one known rule at random, then the epsilon whose reverse attack
    minimises ``<rule output, honest mean>``.

    Returns ``(byzantine, chosen_epsilon, simulated_member)``.
    """
    if view.pool is None:
        raise InvalidInputError("adaptive attack needs the pool description")
    if len(epsilon_set) == 0:
        raise InvalidInputError("epsilon_set is empty")
    if view.rng is None:
        raise InvalidInputError("adaptive attack needs the adversary stream")
    honest = view.honest_gradients
    if f + honest.shape[0] != n:
        raise InvalidInputError(f"view holds {honest.shape[0]} honest gradients, expected n-f={n - f}")
    member = int(view.rng.integers(len(view.pool.members)))
    spec = view.pool.members[member]
    direction = honest.mean(axis=0)
    best = None
    for eps in epsilon_set:
        byz = attack_epsilon_reverse(view, f, float(eps))
        dot = _simulate_dot(spec, byz, honest, f, direction, view.rng, cost)
        if best is None or dot < best[0]:
            best = (dot, float(eps), byz)
    return best[2], best[1], member


def attack_minmax_pool(view: AdversaryView, f: int, lambda_grid: Sequence[float] | None = None,
                       cost: AttackCost | None = None) -> tuple[np.ndarray, float, float]:
    """Grid solver for the restricted min-max attack against a whole pool.

    Byzantines send ``-lambda * sum(honest)``; for each grid point the worst case
    over pool members of ``<output, honest mean>`` is evaluated. Returns
    ``(byzantine, achieved_xi, lambda)`` for the grid point with the smallest
    worst case. A negative ``achieved_xi`` fools every member this round.
    """
    if view.pool is None:
        raise InvalidInputError("minmax attack needs the pool description")
    grid = DEFAULT_LAMBDA_GRID if lambda_grid is None else tuple(lambda_grid)
    if not grid:
        raise InvalidInputError("lambda_grid is empty")
    honest = view.honest_gradients
    validate_pool(view.pool, f + honest.shape[0], f)
    total = honest.sum(axis=0)
    direction = honest.mean(axis=0)
    best = None
    for lam in grid:
        byz = np.tile(-float(lam) * total, (f, 1))
        xi = max(_simulate_dot(m, byz, honest, f, direction, view.rng, cost) for m in view.pool.members)
        if best is None or xi < best[0]:
            best = (xi, float(lam), byz)
    return best[2], best[0], best[1]


def a_little_default_z(n: int, f: int) -> float:
    """The largest deviation that keeps the Byzantines inside a majority
    (``s = floor(n/2 + 1) - f`` supporters needed)."""
    s = math.floor(n / 2 + 1) - f
    prob = (n - s) / n
    prob = min(max(prob, 1e-12), 1 - 1e-12)
    return NormalDist().inv_cdf(prob)


def attack_a_little(view: AdversaryView, f: int, n: int, z: float | None = None) -> np.ndarray:
    """Per coordinate, ``mean - z * std`` of the honest values (population std)."""
    honest = view.honest_gradients
    if honest.shape[0] < 2:
        raise InvalidInputError("'A Little' needs at least 2 honest gradients")
    if z is None:
        z = a_little_default_z(n, f)
    mu = honest.mean(axis=0)
    sd = honest.std(axis=0, ddof=0)
    return np.tile(mu - z * sd, (f, 1))


def verify_attack(byzantine, honest, agg: AggregatorSpec, f: int | None = None,
                  rng: SeededRng | None = None, cost: AttackCost | None = None) -> tuple[float, bool]:
    """Aggregate ``byzantine + honest`` and report ``(<U, mean(honest)>, dot < 0)``."""
    honest = as_panel(honest)
    byz = np.asarray(byzantine, dtype=np.float64).reshape(-1, honest.shape[1]) if len(byzantine) else \
        np.zeros((0, honest.shape[1]))
    f = byz.shape[0] if f is None else f
    panel = np.vstack([byz, honest])
    try:
        agg.check_feasible(panel.shape[0], f)
    except ConfigurationError as exc:
        raise InvalidInputError(str(exc)) from None
    dot = _simulate_dot(agg, byz, honest, f, honest.mean(axis=0), rng, cost)
    return dot, dot < 0


def generate_attack(spec: AttackSpec, view: AdversaryView, n: int, f: int,
                    cost: AttackCost | None = None) -> AttackResult:
    """Dispatch ``spec`` against a view holding all ``n - f`` honest gradients."""
    kind = spec.kind
    d = view.honest_gradients.shape[1]
    if kind is AttackKind.NONE or f == 0:
        return AttackResult(np.zeros((0, d)))
    if kind is AttackKind.EPSILON_REVERSE:
        return AttackResult(attack_epsilon_reverse(view, f, spec.epsilon), spec.epsilon)
    if kind is AttackKind.PARTIAL_KNOWLEDGE:
        known = AdversaryView(view.honest_gradients[: spec.k - f], view.pool, view.rng)
        return AttackResult(attack_partial_knowledge(known, n, f, spec.epsilon), spec.epsilon)
    if kind is AttackKind.RANDOM_EPSILON:
        byz, eps = attack_random_epsilon(view, f, spec.epsilon_set)
        return AttackResult(byz, eps)
    if kind is AttackKind.ADAPTIVE:
        byz, eps, member = attack_adaptive(view, f, spec.epsilon_set, n, cost)
        return AttackResult(byz, eps, member)
    if kind is AttackKind.MINMAX_POOL:
        byz, xi, lam = attack_minmax_pool(view, f, spec.lambda_grid, cost)
        return AttackResult(byz, lam, dot=xi)
    if kind is AttackKind.A_LITTLE:
        return AttackResult(attack_a_little(view, f, n, spec.z), spec.z)
    raise ConfigurationError(f"unsupported attack {kind}")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t)


def parse_attack(text: str) -> AttackSpec:
    """Build an :class:`AttackSpec` from e.g. ``"reverse eps=0.1"``,
    ``"adaptive eps_set=0.1,0.5,1,10"``, ``"partial eps=10 k=6"``, ``"minmax grid=0.1,1,10"``."""
    kv = parse_kv(text)
    try:
        kind = _attack_kind(kv.pop("kind"))
        eps = kv.pop("eps", kv.pop("epsilon", None))
        eps_set = kv.pop("eps_set", kv.pop("epsilon_set", None))
        k = kv.pop("k", None)
        z = kv.pop("z", None)
        grid = kv.pop("grid", kv.pop("lambda_grid", None))
        if kv:
            raise InvalidInputError(f"unknown attack keys: {sorted(kv)}")
        if kind is AttackKind.ADAPTIVE and eps_set is None:
            eps_set = ",".join(str(e) for e in ADAPTIVE_EPSILONS)
        return AttackSpec(
            kind=kind,
            epsilon=None if eps is None else float(eps),
            epsilon_set=_floats(eps_set) if eps_set else (),
            k=None if k is None else int(k),
            z=None if z is None else float(z),
            lambda_grid=_floats(grid) if grid else None,
        )
    except ValueError as exc:
        if isinstance(exc, (InvalidInputError, ConfigurationError)):
            raise
        raise InvalidInputError(f"bad attack descriptor {text!r}: {exc}") from None
