"""Model constants and the global parameter record."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

# Euler-Mascheroni constant, 15 significant digits.
GAMMA_E = 0.577215664901533


def reference_level(gamma_e: float = GAMMA_E, zeta: float = 0.0) -> float:
    """Arithmetic average of the normalized GOP for a given logarithmic average.

    ``2 * exp(gamma_e - 1 + zeta)``; ``zeta = 0`` gives the entropy-maximizing level.
    """
    return 2.0 * math.exp(gamma_e - 1.0 + zeta)


Y_BAR = reference_level()

ENTROPY_MAXIMIZING = "entropy-maximizing"
FREE = "free"


class ParameterError(ValueError):
    """Raised for invalid model parameters."""


@dataclass(frozen=True)
class ModelParams:
    """Global model constants.

    Attributes:
        n: Number of driving Brownian motions.
        activities: Per-component activities (per unit calendar time).
        horizon: Simulation horizon in calendar time.
        dt: Calendar time step.
        seed: Root seed for all random streams.
        gamma_e: Euler-Mascheroni constant used for the reference level.
        y_bar: Reference level of the normalized GOPs. Derived from ``gamma_e``
            in entropy-maximizing mode.
        mode: ``"entropy-maximizing"`` or ``"free"``.
    """

    n: int = 3
    activities: tuple[float, ...] = (0.05, 0.05, 0.05)
    horizon: float = 10.0
    dt: float = 1.0 / 252.0
    seed: int = 0
    gamma_e: float = GAMMA_E
    y_bar: float | None = None
    mode: str = ENTROPY_MAXIMIZING

    def __post_init__(self):
        object.__setattr__(self, "activities", tuple(float(a) for a in self.activities))
        if not isinstance(self.n, int) or self.n < 1:
            raise ParameterError(f"n must be a positive integer, got {self.n!r}")
        if len(self.activities) != self.n:
            raise ParameterError(
                f"expected {self.n} activities, got {len(self.activities)}"
            )
        if any(not math.isfinite(a) or a < 0 for a in self.activities):
            raise ParameterError("activities must be finite and nonnegative")
        if not self.dt > 0:
            raise ParameterError("dt must be positive")
        if not self.horizon >= self.dt:
            raise ParameterError("horizon must be at least one time step")
        if not 0 <= int(self.seed) < 2**64:
            raise ParameterError("seed must fit in an unsigned 64-bit integer")
        if self.mode not in (ENTROPY_MAXIMIZING, FREE):
            raise ParameterError(f"unknown mode {self.mode!r}")

        level = reference_level(self.gamma_e)
        if self.mode == ENTROPY_MAXIMIZING:
            if self.y_bar is None:
                object.__setattr__(self, "y_bar", level)
            elif not math.isclose(self.y_bar, level, rel_tol=1e-12):
                raise ParameterError(
                    f"entropy-maximizing mode requires y_bar = {level!r}, got {self.y_bar!r}"
                )
        elif self.y_bar is None or not self.y_bar > 0:
            raise ParameterError("free mode requires a positive y_bar")

    @classmethod
    def equal_activities(cls, n: int, activity: float, **kwargs) -> "ModelParams":
        return cls(n=n, activities=(activity,) * n, **kwargs)

    @property
    def steps(self) -> int:
        """Number of time steps on the uniform calendar grid."""
        return int(round(self.horizon / self.dt))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["activities"] = list(self.activities)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        d = dict(d)
        if "activities" in d and "n" not in d:
            d["n"] = len(d["activities"])
        if "activities" not in d and "activity" in d:
            d["activities"] = (d.pop("activity"),) * int(d.get("n", 3))
        d.pop("activity", None)
        return cls(**d)

    @classmethod
    def from_json(cls, path: str | Path) -> "ModelParams":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def replace(self, **changes) -> "ModelParams":
        d = self.to_dict()
        d.update(changes)
        if "n" in changes and "activities" not in changes:
            d["activities"] = (self.activities[0],) * changes["n"]
        if self.mode == ENTROPY_MAXIMIZING and "gamma_e" in changes:
            d["y_bar"] = None
        return ModelParams.from_dict(d)
