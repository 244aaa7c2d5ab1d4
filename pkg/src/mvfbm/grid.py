"""Uniform time grids and grid-sampled functions.

Everything downstream (kernel quadrature, path generation, the particle
solver) shares one uniform partition of [0, T].  Weight matrices are
precomputed per (grid, hurst) pair, which only pays off because the grid
never changes mid-run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GridMismatchError(ValueError):
    """Two grid functions do not live on the same time grid."""


def validate_hurst(hurst: float) -> float:
    """Return ``hurst`` as a float, rejecting values outside (1/2, 1)."""
    h = float(hurst)
    if not 0.5 < h < 1.0:
        raise ValueError(f"Hurst parameter must lie in (1/2, 1), got {h}")
    return h


@dataclass(frozen=True)
class Hurst:
    """Hurst parameter restricted to the long-memory regime (1/2, 1)."""

    value: float

    def __post_init__(self):
        object.__setattr__(self, "value", validate_hurst(self.value))

    def __float__(self) -> float:
        return self.value


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition 0 = t_0 < t_1 < ... < t_n = T."""

    horizon: float
    n_steps: int

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if not (isinstance(self.n_steps, (int, np.integer)) and self.n_steps >= 1):
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        """Node times t_0..t_n, shape (n_steps + 1,)."""
        return np.linspace(0.0, self.horizon, self.n_steps + 1)

    @property
    def midpoints(self) -> np.ndarray:
        """Cell midpoints, shape (n_steps,)."""
        return (np.arange(self.n_steps) + 0.5) * self.dt

    def refine(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.horizon, self.n_steps * factor)

    def key(self) -> tuple:
        return (float(self.horizon), int(self.n_steps))


@dataclass
class GridFunction:
    """Values of a (possibly vector valued) function at the grid nodes.

    ``values`` has shape (n_steps + 1,) for scalars or (n_steps + 1, d).
    """

    grid: TimeGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[0] != self.grid.n_steps + 1:
            raise ValueError(
                f"expected {self.grid.n_steps + 1} node values, "
                f"got {self.values.shape[0]}"
            )

    @property
    def dim(self) -> int:
        return 1 if self.values.ndim == 1 else self.values.shape[1]

    def require_same_grid(self, other: "GridFunction") -> None:
        if self.grid.key() != other.grid.key():
            raise GridMismatchError(
                f"grids differ: {self.grid.key()} vs {other.grid.key()}"
            )

    @staticmethod
    def from_callable(grid: TimeGrid, fn) -> "GridFunction":
        return GridFunction(grid, np.asarray([fn(t) for t in grid.nodes], dtype=float))

    @staticmethod
    def zeros(grid: TimeGrid, dim: int = 1) -> "GridFunction":
        shape = (grid.n_steps + 1,) if dim == 1 else (grid.n_steps + 1, dim)
        return GridFunction(grid, np.zeros(shape))
