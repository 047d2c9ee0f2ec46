"""Uniform dyadic time grids and Hurst/Hölder exponent bundles."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of [0, T] with a power-of-two number of steps.

    ``points`` has ``n_steps + 1`` entries, t_k = k * T / n_steps.
    """

    horizon_T: float
    n_steps: int
    points: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.horizon_T <= 0:
            raise ParameterError(f"horizon_T must be positive, got {self.horizon_T}")
        if not _is_power_of_two(self.n_steps):
            raise ParameterError(f"n_steps must be a power of two, got {self.n_steps}")
        pts = np.linspace(0.0, self.horizon_T, self.n_steps + 1)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def h(self) -> float:
        """Uniform step size T / n."""
        return self.horizon_T / self.n_steps

    def refined(self, factor: int) -> "TimeGrid":
        """Grid with ``factor`` times more steps on the same horizon."""
        if factor < 1 or not _is_power_of_two(factor):
            raise ParameterError(f"refine factor must be a power of two >= 1, got {factor}")
        return TimeGrid(self.horizon_T, self.n_steps * factor)

    def coarsened(self, factor: int) -> "TimeGrid":
        if self.n_steps % factor:
            raise ParameterError(f"cannot coarsen {self.n_steps} steps by {factor}")
        return TimeGrid(self.horizon_T, self.n_steps // factor)

    def __eq__(self, other):
        return (
            isinstance(other, TimeGrid)
            and self.horizon_T == other.horizon_T
            and self.n_steps == other.n_steps
        )

    def __hash__(self):
        return hash((self.horizon_T, self.n_steps))


@dataclass(frozen=True)
class HurstParam:
    """Hurst exponent H with working Hölder exponents alpha > beta.

    Requires 1/3 < beta < alpha < H <= 1/2.  H = 1/2 is admitted as the
    Brownian oracle regime (flagged in output metadata by callers).
    """

    H: float
    alpha: float | None = None
    beta: float | None = None

    def __post_init__(self):
        if not (1.0 / 3.0 < self.H <= 0.5):
            raise ParameterError(f"H must lie in (1/3, 1/2], got {self.H}")
        alpha = self.alpha if self.alpha is not None else 1.0 / 3.0 + 0.75 * (self.H - 1.0 / 3.0)
        beta = self.beta if self.beta is not None else (1.0 / 3.0 + alpha) / 2.0
        if not (1.0 / 3.0 < beta < alpha < self.H):
            raise ParameterError(
                f"need 1/3 < beta < alpha < H, got beta={beta}, alpha={alpha}, H={self.H}"
            )
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)

    @property
    def is_brownian_oracle(self) -> bool:
        return self.H == 0.5
