"""
Uniformly sampled real curves.

A Curve carries every energy- or level-indexed quantity of the pipeline:
A(lambda), B(lambda), v(s), I1(s), I2(s), F(s), D(s).
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np

from src.errors import NumericalError


def _frozen(values) -> np.ndarray:
    array = np.array(values, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Curve:
    """A real function on the uniform grid linspace(grid_min, grid_max, len(values))."""
    grid_min: float
    grid_max: float
    values: np.ndarray
    label: str
    err: Optional[np.ndarray] = None
    meta: Dict[str, str] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 1 or values.size < 2:
            raise NumericalError(f"Curve '{self.label}' needs >= 2 samples, got shape {values.shape}")
        if not self.grid_max > self.grid_min:
            raise NumericalError(f"Curve '{self.label}' has empty grid [{self.grid_min}, {self.grid_max}]")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "grid_min", float(self.grid_min))
        object.__setattr__(self, "grid_max", float(self.grid_max))
        if self.err is not None:
            err = _frozen(self.err)
            if err.shape != values.shape:
                raise NumericalError(f"Curve '{self.label}' error estimate has the wrong shape")
            object.__setattr__(self, "err", err)

    @classmethod
    def from_function(cls, label: str, lo: float, hi: float, points: int,
                      fn: Callable[[np.ndarray], np.ndarray]) -> "Curve":
        grid = np.linspace(lo, hi, points)
        return cls(lo, hi, fn(grid), label)

    @property
    def size(self) -> int:
        return int(self.values.size)

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(self.grid_min, self.grid_max, self.size)

    @property
    def step(self) -> float:
        return (self.grid_max - self.grid_min) / (self.size - 1)

    def with_values(self, values, label: Optional[str] = None,
                    err: Optional[np.ndarray] = None, **meta: str) -> "Curve":
        """Same grid, new samples."""
        merged = dict(self.meta)
        merged.update(meta)
        return Curve(self.grid_min, self.grid_max, values, label or self.label, err, merged)

    def at(self, x) -> np.ndarray:
        """Linear interpolation inside the grid."""
        return np.interp(x, self.grid, self.values)

    def same_grid(self, other: "Curve") -> bool:
        return (self.size == other.size
                and np.isclose(self.grid_min, other.grid_min)
                and np.isclose(self.grid_max, other.grid_max))

    def scaled(self, factor: float) -> "Curve":
        err = None if self.err is None else self.err * abs(factor)
        return self.with_values(self.values * factor, err=err)

    def window(self, lo: float, hi: float) -> "Curve":
        """Sub-curve on the grid points within fractions [lo, hi] of the range."""
        x = self.grid
        span = self.grid_max - self.grid_min
        mask = (x >= self.grid_min + lo * span - 1e-12 * span) & (x <= self.grid_min + hi * span + 1e-12 * span)
        idx = np.flatnonzero(mask)
        if idx.size < 2:
            raise NumericalError(f"Window [{lo:g}, {hi:g}] of curve '{self.label}' holds fewer than 2 samples")
        err = None if self.err is None else self.err[idx]
        return Curve(x[idx[0]], x[idx[-1]], self.values[idx], self.label, err, dict(self.meta))


def require_same_grid(*curves: Curve) -> None:
    first = curves[0]
    for other in curves[1:]:
        if not first.same_grid(other):
            raise NumericalError(
                f"Curves '{first.label}' and '{other.label}' are sampled on different grids"
            )
