"""Closed-form bias bounds for generalized Krum, the pool-size condition for
MixTailor, and Monte Carlo estimators that check them on synthetic panels."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .aggregators import AggregatorSpec, PoolSpec, agg_mixtailor, aggregate, validate_pool
from .attacks import AdversaryView, AttackKind, AttackSpec, generate_attack
from .core import InvalidInputError, SeededRng, Stream
from .schedules import LrSchedule

__all__ = [
    "BoundInputs",
    "capital_lambda",
    "iid_bias_bound",
    "noniid_bias_bound",
    "mixtailor_sufficient_M",
    "GaussianHonestModel",
    "MonteCarloSamples",
    "mc_samples",
    "mc_resilience_margin",
    "mc_moment_ratio",
    "mc_bias_check",
    "ConvergenceReport",
    "convergence_condition_report",
]


@dataclass(frozen=True)
class BoundInputs:
    n: int
    f: int
    d: int
    p: float = 2.0
    sigma2: float = 0.0
    delta2: float = 0.0
    L: float = 1.0
    lambda_sup: float = 0.0
    beta_min: float = 1.0
    q: int = 1
    M: int = 2


def _check_nf(n: int, f: int) -> None:
    if f < 0:
        raise InvalidInputError("f must be nonnegative")
    if n <= 2 * f + 2:
        raise InvalidInputError(f"n > 2f+2 violated (n={n}, f={f})")


def capital_lambda(n: int, f: int, d: int, p: float) -> float:
    """``d ** ((max(p,2) - min(p,2)) / p) * (1 + 2f / (n - 2f - 2))``."""
    _check_nf(n, f)
    if d < 1:
        raise InvalidInputError("d must be >= 1")
    if not p >= 1:
        raise InvalidInputError("p must be >= 1")
    exponent = (max(p, 2.0) - min(p, 2.0)) / p
    return d**exponent * (1.0 + 2.0 * f / (n - 2 * f - 2))


def iid_bias_bound(inputs: BoundInputs) -> float:
    """Bound on ``||E[U] - grad F||^2`` for generalized Krum with iid honest workers."""
    if inputs.sigma2 < 0:
        raise InvalidInputError("sigma2 must be nonnegative")
    lam = capital_lambda(inputs.n, inputs.f, inputs.d, inputs.p)
    return 2.0 * inputs.sigma2 * (1.0 + lam)


def _c1_c2(inputs: BoundInputs) -> tuple[float, float]:
    n, f, s2, dl2 = inputs.n, inputs.f, inputs.sigma2, inputs.delta2
    c1 = 6.0 * s2 + 2.0 * (n - f + 3 + 2.0 * (n - f) / (n - 2 * f - 2)) * dl2
    c2 = 4.0 * s2 + 8.0 * (n - f) * dl2
    return c1, c2


def noniid_bias_bound(inputs: BoundInputs) -> float:
    """``C1 + C2 * Lambda`` under bounded within-client and inter-client variance."""
    if inputs.sigma2 < 0 or inputs.delta2 < 0:
        raise InvalidInputError("variances must be nonnegative")
    lam = capital_lambda(inputs.n, inputs.f, inputs.d, inputs.p)
    c1, c2 = _c1_c2(inputs)
    return c1 + c2 * lam


def mixtailor_sufficient_M(q: int, lambda_sup: float, L: float, beta_min: float) -> float:
    """Pool-size threshold ``q * (1 + lambda * L / beta_min)``; any ``M`` strictly
    above it keeps the mixture resilient when ``q`` members are compromised."""
    if not beta_min > 0:
        raise InvalidInputError("beta_min must be positive")
    if q < 1:
        raise InvalidInputError("q must be >= 1")
    if lambda_sup < 0 or L < 0:
        raise InvalidInputError("lambda and L must be nonnegative")
    return q * (1.0 + lambda_sup * L / beta_min)


@dataclass
class GaussianHonestModel:
    """Honest worker ``i`` draws ``N(grad + offset_i, sigma2/d * I)``.

    ``offsets`` are fixed, centred, and scaled so their mean squared norm equals
    ``delta2`` (zero in the iid case). ``num_honest`` defaults to ``n - f``.
    """

    grad: np.ndarray
    sigma2: float
    n: int
    f: int
    delta2: float = 0.0
    num_honest: int | None = None
    offset_seed: int = 0
    offsets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.grad = np.asarray(self.grad, dtype=np.float64).ravel()
        if self.num_honest is None:
            self.num_honest = self.n - self.f
        if self.num_honest < 1:
            raise InvalidInputError("need at least one honest worker")
        d = self.grad.size
        h = self.num_honest
        if self.delta2 > 0 and h > 1:
            raw = SeededRng(self.offset_seed, Stream.DATASET).standard_normal((h, d))
            raw -= raw.mean(axis=0)
            raw *= math.sqrt(self.delta2 / np.mean(np.sum(raw**2, axis=1)))
            self.offsets = raw
        else:
            self.offsets = np.zeros((h, d))

    @property
    def dim(self) -> int:
        return self.grad.size

    def sample(self, rng: SeededRng) -> np.ndarray:
        noise = rng.standard_normal((self.num_honest, self.dim)) * math.sqrt(self.sigma2 / self.dim)
        return self.grad + self.offsets + noise


@dataclass
class MonteCarloSamples:
    outputs: np.ndarray      # (trials, d) aggregate per trial
    honest: np.ndarray       # (trials * num_honest, d) honest draws
    grad: np.ndarray


def _fan_out(rng: SeededRng) -> tuple[SeededRng, SeededRng, SeededRng]:
    seeds = rng.raw(3)
    return (SeededRng(int(seeds[0]), Stream.DATA),
            SeededRng(int(seeds[1]), Stream.POOL),
            SeededRng(int(seeds[2]), Stream.ATTACK))


def mc_samples(agg: AggregatorSpec | PoolSpec, honest_model: GaussianHonestModel,
               attack: AttackSpec | None, trials: int, rng: SeededRng) -> MonteCarloSamples:
    """Run ``trials`` independent rounds of (sample honest, attack, aggregate)."""
    attack = attack or AttackSpec(AttackKind.NONE)
    f = honest_model.f
    h = honest_model.num_honest
    silent = attack.kind is AttackKind.NONE or f == 0
    panel_n = h if silent else h + f
    validate_pool(agg, panel_n, f)
    attack.check_feasible(h + f, f)
    pool = agg if isinstance(agg, PoolSpec) else PoolSpec((agg,))
    sample_rng, server_rng, attack_rng = _fan_out(rng)
    outputs = np.empty((trials, honest_model.dim))
    honest_all = np.empty((trials * h, honest_model.dim))
    for t in range(trials):
        honest = honest_model.sample(sample_rng)
        honest_all[t * h:(t + 1) * h] = honest
        if silent:
            panel = honest
        else:
            view = AdversaryView(honest, pool, attack_rng)
            byz = generate_attack(attack, view, h + f, f).byzantine
            panel = np.vstack([byz, honest])
        if isinstance(agg, PoolSpec):
            outputs[t] = agg_mixtailor(panel, agg, f, server_rng).result
        else:
            outputs[t] = aggregate(agg, panel, f, server_rng).result
    return MonteCarloSamples(outputs, honest_all, honest_model.grad)


def _check_trials(trials: int) -> None:
    if trials < 100:
        raise InvalidInputError("Monte Carlo estimates need trials >= 100")


def mc_resilience_margin(agg, honest_model: GaussianHonestModel, attack: AttackSpec | None,
                         trials: int, rng: SeededRng) -> tuple[float, float]:
    """Estimate ``E[<U, grad F>]`` and its standard error.

    The rule counts as resilient on this panel when ``mean - 3 * stderr > 0``.
    """
    _check_trials(trials)
    s = mc_samples(agg, honest_model, attack, trials, rng)
    dots = s.outputs @ s.grad
    return float(dots.mean()), float(dots.std(ddof=1) / math.sqrt(trials))


def mc_moment_ratio(agg, honest_model: GaussianHonestModel, attack: AttackSpec | None, r: int,
                    trials: int, rng: SeededRng) -> float:
    """Empirical ``E||U||^r / E||G||^r`` with ``G`` a random honest gradient."""
    if r not in (2, 3, 4):
        raise InvalidInputError(f"r must be one of 2, 3, 4 (got {r})")
    _check_trials(trials)
    s = mc_samples(agg, honest_model, attack, trials, rng)
    num = np.mean(np.linalg.norm(s.outputs, axis=1) ** r)
    den = np.mean(np.linalg.norm(s.honest, axis=1) ** r)
    return float(num / den)


def mc_bias_check(agg, honest_model: GaussianHonestModel, attack: AttackSpec | None,
                  trials: int, rng: SeededRng) -> tuple[float, float]:
    """Estimate ``||E[U] - grad F||^2`` with its Monte Carlo error.

    Returns ``(estimate, error)`` where the estimate removes the ``tr(Cov)/T``
    bias of the plug-in ``||mean(U) - grad||^2`` and the error is the
    delta-method standard deviation of the plug-in.
    """
    _check_trials(trials)
    s = mc_samples(agg, honest_model, attack, trials, rng)
    b = s.outputs.mean(axis=0) - s.grad
    cov = np.atleast_2d(np.cov(s.outputs, rowvar=False))
    est = float(b @ b - np.trace(cov) / trials)
    err = math.sqrt(max(4.0 * float(b @ cov @ b) / trials + 2.0 * float(np.sum(cov * cov)) / trials**2, 0.0))
    return est, err


@dataclass
class ConvergenceReport:
    min_cosine: float
    margin: float | None
    probes: int
    sum_diverges: bool | None = None
    square_summable: bool | None = None

    @property
    def schedule_ok(self) -> bool | None:
        if self.sum_diverges is None:
            return None
        return self.sum_diverges and self.square_summable


def convergence_condition_report(R: float, probes: Sequence, grad_fn: Callable[[np.ndarray], np.ndarray],
                              bound_inputs: BoundInputs | None = None, beta: float = 0.0,
                              expected_update_fn: Callable[[np.ndarray], np.ndarray] | None = None,
                              schedule: LrSchedule | None = None) -> ConvergenceReport:
    """Evaluate the convergence hypotheses on probe points with ``||w||^2 >= R``.

    Reports the smallest cosine between ``w`` and ``grad F(w)``, and (given bound
    inputs) ``inf||E U||^2 + inf||grad F||^2 - (C1 + C2 Lambda) - beta``. When no
    estimate of ``E[U]`` is supplied the gradient itself is used. Nothing here
    asserts convergence.
    """
    probes = [np.asarray(w, dtype=np.float64).ravel() for w in probes]
    if not probes:
        raise InvalidInputError("empty probe grid")
    cosines, grad_sq, upd_sq = [], [], []
    for w in probes:
        if float(w @ w) < R:
            raise InvalidInputError(f"probe with ||w||^2={float(w @ w):.4g} < R={R}")
        g = np.asarray(grad_fn(w), dtype=np.float64).ravel()
        gn = float(np.linalg.norm(g))
        wn = float(np.linalg.norm(w))
        cosines.append(float(w @ g) / (wn * gn) if gn > 0 and wn > 0 else 0.0)
        grad_sq.append(gn**2)
        u = g if expected_update_fn is None else np.asarray(expected_update_fn(w)).ravel()
        upd_sq.append(float(u @ u))
    margin = None
    if bound_inputs is not None:
        margin = min(upd_sq) + min(grad_sq) - noniid_bias_bound(bound_inputs) - beta
    rep = ConvergenceReport(min(cosines), margin, len(probes))
    if schedule is not None:
        rep.sum_diverges = schedule.sum_diverges
        rep.square_summable = schedule.square_summable
    return rep
