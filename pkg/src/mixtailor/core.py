"""Numeric primitives, seeded random streams and shared domain types."""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "InvalidInputError",
    "ConfigurationError",
    "DivergenceError",
    "Stream",
    "SeededRng",
    "WorkerUpdate",
    "as_panel",
    "pnorm",
    "pairwise_distances",
    "norm_sandwich_check",
    "read_gradient_csv",
    "format_gradient_csv",
    "fmt",
]


class InvalidInputError(ValueError):
    """An operation was called with inputs violating its preconditions."""


class ConfigurationError(ValueError):
    """A rule, pool or experiment cannot be configured for the given (n, f)."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite model state."""

    def __init__(self, iteration: int, message: str | None = None):
        self.iteration = iteration
        super().__init__(message or f"model state became non-finite at iteration {iteration}")


class Stream(enum.IntEnum):
    """Named stream ids fanned out from one experiment seed.

    Worker mini-batch streams use ``Stream.WORKER + worker_id``.
    """

    POOL = 0
    DATA = 1
    ATTACK = 2
    INIT = 3
    DATASET = 4
    POOL_BUILD = 5
    WORKER = 1000


class SeededRng:
    """A single-consumer random stream identified by ``(seed, stream_id)``.

    Backed by numpy's PCG64 seeded through ``SeedSequence(seed, spawn_key=(stream_id,))``,
    so identical pairs replay identical draws on every platform for a fixed numpy
    version. Streams with different ids are statistically independent.
    """

    __slots__ = ("seed", "stream_id", "generator")

    def __init__(self, seed: int, stream_id: int = 0):
        if seed < 0 or seed >= 2**64:
            raise InvalidInputError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.seed}, stream_id={self.stream_id})"

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size=size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size=size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size=size)

    def standard_normal(self, size=None):
        return self.generator.standard_normal(size=size)

    def random(self, size=None):
        return self.generator.random(size=size)

    def choice(self, a, size=None, replace=True):
        return self.generator.choice(a, size=size, replace=replace)

    def permutation(self, x):
        return self.generator.permutation(x)

    def raw(self, size: int) -> np.ndarray:
        """Raw 64-bit outputs of the underlying bit generator."""
        return self.generator.bit_generator.random_raw(size)


@dataclass(frozen=True)
class WorkerUpdate:
    """One worker's submission. ``honest`` is simulation metadata; servers never read it."""

    worker_id: int
    gradient: np.ndarray
    honest: bool = True


def as_panel(updates) -> np.ndarray:
    """Stack a sequence of equal-length vectors (or a 2-D array) into an ``(n, d)`` float array."""
    if isinstance(updates, np.ndarray):
        panel = np.asarray(updates, dtype=np.float64)
        if panel.ndim == 1:
            panel = panel[None, :]
    else:
        rows = [np.asarray(u, dtype=np.float64).ravel() for u in updates]
        if not rows:
            raise InvalidInputError("empty update set")
        dims = {r.shape[0] for r in rows}
        if len(dims) != 1:
            raise InvalidInputError(f"dimension mismatch across updates: {sorted(dims)}")
        panel = np.stack(rows)
    if panel.ndim != 2:
        raise InvalidInputError(f"expected a 2-D panel, got shape {panel.shape}")
    if panel.shape[0] == 0:
        raise InvalidInputError("empty update set")
    return panel


def _check_p(p: float) -> float:
    p = float(p)
    if not np.isfinite(p) or p < 1.0:
        raise InvalidInputError(f"p must be >= 1, got {p}")
    return p


def pnorm(x, p: float = 2.0) -> float:
    """The l_p norm of ``x``, computed after factoring out ``max|x_i|`` to avoid overflow."""
    p = _check_p(p)
    x = np.asarray(x, dtype=np.float64).ravel()
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("pnorm of a non-finite vector")
    a = np.abs(x)
    scale = a.max(initial=0.0)
    if scale == 0.0:
        return 0.0
    if p == 2.0:
        return float(np.linalg.norm(x))
    return float(scale * np.sum((a / scale) ** p) ** (1.0 / p))


def _row_pnorms(diff: np.ndarray, p: float) -> np.ndarray:
    """l_p norms along the last axis, max-normalised."""
    a = np.abs(diff)
    if p == 2.0:
        return np.sqrt(np.einsum("...i,...i->...", a, a))
    if p == 1.0:
        return a.sum(axis=-1)
    scale = a.max(axis=-1, keepdims=True)
    safe = np.where(scale > 0, scale, 1.0)
    return (safe[..., 0]) * np.sum((a / safe) ** p, axis=-1) ** (1.0 / p)


def pairwise_distances(updates, p: float = 2.0) -> np.ndarray:
    """Symmetric matrix of l_p distances between all pairs of updates."""
    p = _check_p(p)
    panel = as_panel(updates)
    if panel.shape[0] < 2:
        raise InvalidInputError("pairwise_distances needs at least 2 updates")
    if not np.all(np.isfinite(panel)):
        raise InvalidInputError("non-finite entries in update panel")
    n = panel.shape[0]
    out = np.zeros((n, n))
    for i in range(n - 1):
        row = _row_pnorms(panel[i + 1:] - panel[i], p)
        out[i, i + 1:] = row
        out[i + 1:, i] = row
    return out


def norm_sandwich_check(x, p: float, q: float, rel_tol: float = 1e-9) -> bool:
    """Check ``||x||_q <= ||x||_p <= d^(1/p - 1/q) ||x||_q`` for ``0 < p < q``.

    Evaluated directly (no max-normalisation shortcuts) so the check stays
    independent of :func:`pnorm`'s implementation; p may be below 1 here.
    """
    if not (0 < p < q):
        raise InvalidInputError(f"need 0 < p < q, got p={p}, q={q}")
    x = np.asarray(x, dtype=np.float64).ravel()
    if not np.all(np.isfinite(x)) or x.size == 0:
        raise InvalidInputError("norm_sandwich_check needs a finite, non-empty vector")
    a = np.abs(x)
    scale = a.max()
    if scale == 0.0:
        return True
    a = a / scale
    np_ = np.sum(a**p) ** (1.0 / p)
    nq = np.sum(a**q) ** (1.0 / q)
    upper = x.size ** (1.0 / p - 1.0 / q) * nq
    slack = rel_tol * max(np_, nq, upper)
    return bool(nq <= np_ + slack and np_ <= upper + slack)


def fmt(value: float) -> str:
    """Format a real with 9 significant digits."""
    return f"{float(value):.9g}"


def read_gradient_csv(source) -> np.ndarray:
    """Read a gradient matrix: one row per worker, '#'-prefixed header lines skipped.

    ``source`` may be a path or an open text stream.
    """
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source, "r", encoding="utf-8") as fh:
            text = fh.read()
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        try:
            rows.append([float(tok) for tok in next(csv.reader([stripped]))])
        except ValueError as exc:
            raise InvalidInputError(f"line {lineno}: {exc}") from None
    panel = as_panel(rows) if rows else None
    if panel is None:
        raise InvalidInputError("gradient CSV contains no rows")
    if not np.all(np.isfinite(panel)):
        raise InvalidInputError("gradient CSV contains non-finite values")
    return panel


def format_gradient_csv(panel: Iterable[Sequence[float]], header: str | None = None) -> str:
    buf = io.StringIO()
    if header:
        buf.write(f"# {header}\n")
    for row in panel:
        buf.write(",".join(fmt(v) for v in np.ravel(row)) + "\n")
    return buf.getvalue()
