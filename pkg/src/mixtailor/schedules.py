"""Learning-rate schedules of the form ``base * (t0 / (t0 + t)) ** power``."""

from __future__ import annotations

from dataclasses import dataclass

from .core import InvalidInputError


@dataclass(frozen=True)
class LrSchedule:
    base: float
    power: float = 0.0
    t0: float = 1.0

    def __post_init__(self):
        if not self.base > 0:
            raise InvalidInputError("learning rate must be positive")
        if self.power < 0:
            raise InvalidInputError("schedule power must be nonnegative")
        if not self.t0 > 0:
            raise InvalidInputError("t0 must be positive")

    @classmethod
    def constant(cls, base: float) -> "LrSchedule":
        return cls(base, 0.0)

    @classmethod
    def inverse_t(cls, base: float, t0: float = 1.0) -> "LrSchedule":
        return cls(base, 1.0, t0)

    @classmethod
    def parse(cls, text: str, base: float) -> "LrSchedule":
        text = text.strip().lower()
        if text in ("constant", "const"):
            return cls.constant(base)
        if text in ("inverse_t", "1/t", "c/t"):
            return cls.inverse_t(base)
        if text.startswith("power:"):
            return cls(base, float(text.split(":", 1)[1]))
        raise InvalidInputError(f"unknown lr schedule {text!r}")

    def rate(self, t: int) -> float:
        """Learning rate at 0-based step ``t``."""
        if self.power == 0.0:
            return self.base
        return self.base * (self.t0 / (self.t0 + t)) ** self.power

    @property
    def sum_diverges(self) -> bool:
        """Whether sum_t rate(t) = infinity (p-series test)."""
        return self.power <= 1.0

    @property
    def square_summable(self) -> bool:
        """Whether sum_t rate(t)^2 < infinity."""
        return 2.0 * self.power > 1.0
