"""
Test potentials and quadrature oracles

Defines the radial profiles and analytic potential families the pipeline is
exercised on, their gradients, and oracles that compute every phase-space and
level-set invariant directly from V:

- phase_space_integral_oracle: int_{V<lambda} (lambda - V)^{n/2} [|grad V|^2] dx
- level_surface_invariants_oracle: I1(s), I2(s) and the level-surface area
- sublevel_volume_oracle: vol{V < s}
- pushforward_density: histogram density of V_* dx with atom flags

These are the ground truth the spectral extraction is checked against.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from contourpy import LineType, contour_generator
from scipy.interpolate import PchipInterpolator

from src.config import Config, PotentialConfig, QuadratureParams
from src.errors import (
    ConfigurationError,
    CoverageError,
    DomainError,
    NearCriticalError,
    UnsupportedGeometryError,
)
from src.lib.artifacts import write_curve
from src.lib.curves import Curve
from src.logger import get_logger
from src.transforms.geometry import unit_ball_volume

logger = get_logger('potentials')

NEAR_CRITICAL_GRAD = 1e-10
REGULAR_VALUE_RATIO = 1e-6
FD_STEP_FRACTION = 1e-5

WEIGHTS = ("one", "grad-squared")


# ---------------------------------------------------------------------------
# Radial profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RadialProfile:
    """
    Monotone radial profile R on [0, R0] with R(0) = 0 and R(R0) = lambda0.

    kind = "power": R(r) = c * r^p
    kind = "table": strictly increasing samples joined by a monotone cubic (PCHIP)
    """
    n: int
    R0: float
    lambda0: float
    kind: str
    c: float = 1.0
    p: float = 2.0
    r_table: Optional[np.ndarray] = None
    R_table: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.n < 2:
            raise ConfigurationError(f"Profile dimension must be >= 2, got {self.n}")
        if not (self.R0 > 0 and self.lambda0 > 0):
            raise ConfigurationError("Profile needs R0 > 0 and lambda0 > 0")
        if self.kind == "power":
            if not (self.c > 0 and self.p > 0):
                raise ConfigurationError("Power-law profile needs c > 0 and p > 0")
            if not math.isclose(self.c * self.R0 ** self.p, self.lambda0, rel_tol=1e-9):
                raise ConfigurationError("Power-law profile must satisfy R(R0) = lambda0")
        elif self.kind == "table":
            r = np.array(self.r_table, dtype=float)
            R = np.array(self.R_table, dtype=float)
            if r.ndim != 1 or r.shape != R.shape or r.size < 2:
                raise ConfigurationError("Table profile needs matching 1-D r and R arrays")
            if r[0] != 0.0 or R[0] != 0.0:
                raise ConfigurationError("Table profile must start at (0, 0)")
            if np.any(np.diff(r) <= 0) or np.any(np.diff(R) <= 0):
                raise ConfigurationError("Table profile r and R values must be strictly increasing")
            r.setflags(write=False)
            R.setflags(write=False)
            object.__setattr__(self, "r_table", r)
            object.__setattr__(self, "R_table", R)
            object.__setattr__(self, "_forward", PchipInterpolator(r, R, extrapolate=False))
            object.__setattr__(self, "_inverse", PchipInterpolator(R, r, extrapolate=False))
        else:
            raise ConfigurationError(f"Unknown profile kind {self.kind!r}")

    @classmethod
    def power_law(cls, n: int, c: float, p: float, lambda0: float) -> "RadialProfile":
        R0 = (lambda0 / c) ** (1.0 / p)
        return cls(n=n, R0=R0, lambda0=lambda0, kind="power", c=c, p=p)

    @classmethod
    def from_table(cls, n: int, r: Sequence[float], R: Sequence[float]) -> "RadialProfile":
        r = np.asarray(r, dtype=float)
        R = np.asarray(R, dtype=float)
        return cls(n=n, R0=float(r[-1]), lambda0=float(R[-1]), kind="table", r_table=r, R_table=R)

    def __call__(self, r):
        r = np.clip(np.asarray(r, dtype=float), 0.0, self.R0)
        if self.kind == "power":
            return self.c * r ** self.p
        return self._forward(r)

    def derivative(self, r):
        r = np.clip(np.asarray(r, dtype=float), 0.0, self.R0)
        if self.kind == "power":
            with np.errstate(divide="ignore"):
                return self.c * self.p * r ** (self.p - 1)
        return self._forward(r, 1)

    def inverse(self, s):
        """rho = R^{-1}(s) for s in [0, lambda0]."""
        s = np.clip(np.asarray(s, dtype=float), 0.0, self.lambda0)
        if self.kind == "power":
            return (s / self.c) ** (1.0 / self.p)
        return self._inverse(s)

    @property
    def edge_slope(self) -> float:
        """R'(R0-)."""
        return float(self.derivative(self.R0))

    def extended(self, r):
        """
        R inside [0, R0]; beyond R0 the confining continuation
        lambda0 + R'(R0-)(r - R0) + (r - R0)^2.
        """
        r = np.asarray(r, dtype=float)
        outside = r - self.R0
        tail = self.lambda0 + self.edge_slope * outside + outside ** 2
        return np.where(r <= self.R0, self(r), tail)

    def extended_derivative(self, r):
        r = np.asarray(r, dtype=float)
        outside = r - self.R0
        return np.where(r <= self.R0, self.derivative(r), self.edge_slope + 2 * outside)

    def describe(self) -> Dict[str, object]:
        if self.kind == "power":
            return {"kind": "power", "c": self.c, "p": self.p, "R0": self.R0, "lambda0": self.lambda0}
        return {"kind": "table", "points": int(self.r_table.size), "R0": self.R0, "lambda0": self.lambda0}


# ---------------------------------------------------------------------------
# Analytic potentials
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AnalyticPotential:
    """
    V on R^n, evaluated inside the cube center +- half_width.

    families:
      radial       V = R_ext(|y|)                       (profile)
      harmonic     V = |y|^2
      anisotropic  V = sum_i w_i y_i^2                  (params = w_1..w_n)
      perturbed    V = |y|^2 + a rho^2 cos(m theta)      (params = a, m; rho, theta polar in y_1, y_2)
      plateau      V = r^2, r1^2 on [r1, r2], r1^2 + (r - r2)^2 beyond   (params = r1, r2)
    with y = x - center.
    """
    n: int
    family: str
    params: Tuple[float, ...] = ()
    profile: Optional[RadialProfile] = None
    center: Optional[np.ndarray] = None
    half_width: Optional[float] = None
    lambda0: float = 1.0

    def __post_init__(self):
        center = np.zeros(self.n) if self.center is None else np.array(self.center, dtype=float)
        if center.shape != (self.n,):
            raise ConfigurationError(f"center must have {self.n} components")
        center.setflags(write=False)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if self.family == "radial":
            if self.profile is None:
                raise ConfigurationError("radial family requires a profile")
            if self.profile.n != self.n:
                raise ConfigurationError("profile dimension does not match potential dimension")
            object.__setattr__(self, "lambda0", self.profile.lambda0)
        elif self.family == "anisotropic":
            if len(self.params) != self.n or min(self.params) <= 0:
                raise ConfigurationError(f"anisotropic family needs {self.n} positive weights")
        elif self.family == "perturbed":
            if len(self.params) != 2 or abs(self.params[0]) >= 1:
                raise ConfigurationError("perturbed family needs (amplitude |a| < 1, mode m)")
        elif self.family == "plateau":
            if len(self.params) != 2 or not 0 < self.params[0] < self.params[1]:
                raise ConfigurationError("plateau family needs 0 < r1 < r2")
        elif self.family != "harmonic":
            raise ConfigurationError(f"Unknown potential family {self.family!r}")
        if self.half_width is None:
            object.__setattr__(self, "half_width", 1.25 * self._reach(self.lambda0))
        elif self.half_width <= 0:
            raise ConfigurationError("half_width must be > 0")

    # constructors -----------------------------------------------------------

    @classmethod
    def harmonic(cls, n: int, lambda0: float = 1.0, center=None, half_width=None) -> "AnalyticPotential":
        return cls(n=n, family="harmonic", lambda0=lambda0, center=center, half_width=half_width)

    @classmethod
    def anisotropic(cls, weights: Sequence[float], lambda0: float = 1.0, center=None,
                    half_width=None) -> "AnalyticPotential":
        return cls(n=len(weights), family="anisotropic", params=tuple(weights), lambda0=lambda0,
                   center=center, half_width=half_width)

    @classmethod
    def radial(cls, profile: RadialProfile, center=None, half_width=None) -> "AnalyticPotential":
        return cls(n=profile.n, family="radial", profile=profile, lambda0=profile.lambda0,
                   center=center, half_width=half_width)

    @classmethod
    def perturbed(cls, n: int, amplitude: float, mode: int, lambda0: float = 1.0,
                  center=None, half_width=None) -> "AnalyticPotential":
        return cls(n=n, family="perturbed", params=(amplitude, mode), lambda0=lambda0,
                   center=center, half_width=half_width)

    @classmethod
    def plateau(cls, n: int, r1: float, r2: float, lambda0: float = 1.0,
                center=None, half_width=None) -> "AnalyticPotential":
        return cls(n=n, family="plateau", params=(r1, r2), lambda0=lambda0,
                   center=center, half_width=half_width)

    # geometry ---------------------------------------------------------------

    def _reach(self, level: float) -> float:
        """Radius of a ball around the center containing {V < level}."""
        if self.family == "harmonic":
            return math.sqrt(level)
        if self.family == "anisotropic":
            return math.sqrt(level / min(self.params))
        if self.family == "perturbed":
            return math.sqrt(level / (1 - abs(self.params[0])))
        if self.family == "plateau":
            r1, r2 = self.params
            height = r1 * r1
            if level <= height:
                return math.sqrt(level)
            return r2 + math.sqrt(level - height)
        return self.profile.R0

    @property
    def box(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.center - self.half_width, self.center + self.half_width

    @property
    def gradient_method(self) -> str:
        if self.family == "radial" and self.profile.kind == "table":
            return "central-difference"
        return "closed-form"

    @property
    def is_radial(self) -> bool:
        return self.family in ("radial", "harmonic", "plateau") or (
            self.family == "anisotropic" and len(set(self.params)) == 1
        ) or (self.family == "perturbed" and self.params[0] == 0)

    def in_box(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lo, hi = self.box
        slack = 1e-12 * self.half_width
        return np.all((x >= lo - slack) & (x <= hi + slack), axis=-1)

    # evaluation -------------------------------------------------------------

    def values(self, x) -> np.ndarray:
        """V at points of shape (..., n); no box check."""
        y = np.asarray(x, dtype=float) - self.center
        if self.family == "harmonic":
            return np.sum(y * y, axis=-1)
        if self.family == "anisotropic":
            return np.sum(np.asarray(self.params) * y * y, axis=-1)
        if self.family == "perturbed":
            a, m = self.params
            rho2 = y[..., 0] ** 2 + y[..., 1] ** 2
            theta = np.arctan2(y[..., 1], y[..., 0])
            return np.sum(y * y, axis=-1) + a * rho2 * np.cos(m * theta)
        r = np.linalg.norm(y, axis=-1)
        if self.family == "plateau":
            r1, r2 = self.params
            height = r1 * r1
            return np.where(r < r1, r * r, np.where(r <= r2, height, height + (r - r2) ** 2))
        return self.profile.extended(r)

    def gradients(self, x) -> np.ndarray:
        """grad V at points of shape (..., n); no box check."""
        x = np.asarray(x, dtype=float)
        y = x - self.center
        if self.family == "harmonic":
            return 2 * y
        if self.family == "anisotropic":
            return 2 * np.asarray(self.params) * y
        if self.family == "perturbed":
            a, m = self.params
            theta = np.arctan2(y[..., 1], y[..., 0])
            cos_m, sin_m = np.cos(m * theta), np.sin(m * theta)
            grad = 2 * y.copy()
            grad[..., 0] += a * (2 * cos_m * y[..., 0] + m * sin_m * y[..., 1])
            grad[..., 1] += a * (2 * cos_m * y[..., 1] - m * sin_m * y[..., 0])
            return grad
        if self.gradient_method == "central-difference":
            return self._central_difference(x)
        r = np.linalg.norm(y, axis=-1)
        if self.family == "plateau":
            r1, r2 = self.params
            slope = np.where(r < r1, 2 * r, np.where(r <= r2, 0.0, 2 * (r - r2)))
        else:
            slope = self.profile.extended_derivative(r)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(r[..., None] > 0, y / r[..., None], 0.0)
        return slope[..., None] * unit

    def _central_difference(self, x: np.ndarray) -> np.ndarray:
        step = FD_STEP_FRACTION * 2 * self.half_width
        grad = np.empty(x.shape, dtype=float)
        for i in range(self.n):
            offset = np.zeros(self.n)
            offset[i] = step
            grad[..., i] = (self.values(x + offset) - self.values(x - offset)) / (2 * step)
        return grad

    def grad_squared(self, x) -> np.ndarray:
        g = self.gradients(x)
        return np.sum(g * g, axis=-1)

    def describe(self) -> Dict[str, object]:
        info = {
            "family": self.family,
            "n": self.n,
            "params": list(self.params),
            "center": self.center.tolist(),
            "half_width": self.half_width,
            "lambda0": self.lambda0,
            "gradient_method": self.gradient_method,
        }
        if self.profile is not None:
            info["profile"] = self.profile.describe()
        return info


def potential_from_config(pc: PotentialConfig) -> AnalyticPotential:
    """Build the potential a run config describes."""
    profile = None
    if pc.profile is not None:
        if pc.profile.kind == "power":
            profile = RadialProfile.power_law(pc.n, pc.profile.c, pc.profile.p, pc.lambda0)
        else:
            profile = RadialProfile.from_table(pc.n, pc.profile.r, pc.profile.values)
    if pc.family == "radial":
        return AnalyticPotential.radial(profile, center=pc.center, half_width=pc.half_width)
    return AnalyticPotential(
        n=pc.n, family=pc.family, params=pc.params, profile=profile,
        center=pc.center, half_width=pc.half_width, lambda0=pc.lambda0,
    )


# ---------------------------------------------------------------------------
# Pointwise operations
# ---------------------------------------------------------------------------

def _check_point(P: AnalyticPotential, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != P.n:
        raise DomainError(f"Point has {x.shape[-1]} components, potential is {P.n}-dimensional")
    if not np.all(P.in_box(x)):
        raise DomainError(f"Point {x.tolist()} outside the evaluation box (half width {P.half_width:g})")
    return x


def eval_potential(P: AnalyticPotential, x) -> float:
    """V(x) inside the evaluation box."""
    x = _check_point(P, x)
    return float(P.values(x))


def grad_potential(P: AnalyticPotential, x) -> np.ndarray:
    """grad V(x); closed form, or central differences for tabulated profiles (P.gradient_method)."""
    x = _check_point(P, x)
    return P.gradients(x)


# ---------------------------------------------------------------------------
# Box quadrature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureResult:
    value: float
    err_est: float
    omega_n: float
    gradient_method: str = "closed-form"

    @property
    def phase_space_value(self) -> float:
        """The phase-space integral: omega_n times the spatial value."""
        return self.omega_n * self.value


class BoxQuadrature:
    """
    Tensor midpoint rule on the potential's box with one level of dyadic
    refinement in the cells that cross a requested level {V = level}.

    The coarse grid (cell centers and per-cell min/max of V over corners and
    center) is built once and reused for every level.
    """

    CHUNK = 4096

    def __init__(self, P: AnalyticPotential, quad: QuadratureParams = QuadratureParams()):
        self.P = P
        self.n = P.n
        self.cells = quad.cells_for(P.n)
        self.refine = quad.refine if P.n <= 3 else min(quad.refine, 2)
        self.width = 2 * P.half_width / self.cells
        lo, _ = P.box

        axis = lo[None, :] + (np.arange(self.cells)[:, None] + 0.5) * self.width
        mesh = np.meshgrid(*[axis[:, i] for i in range(self.n)], indexing="ij")
        self.centers = np.stack([m.ravel() for m in mesh], axis=-1)
        self.center_values = P.values(self.centers)
        self.cell_volume = self.width ** self.n

        corner_axis = lo[None, :] + np.arange(self.cells + 1)[:, None] * self.width
        corner_mesh = np.meshgrid(*[corner_axis[:, i] for i in range(self.n)], indexing="ij")
        corners = P.values(np.stack(corner_mesh, axis=-1))
        cmin = self.center_values.reshape((self.cells,) * self.n).copy()
        cmax = cmin.copy()
        for offset in product((0, 1), repeat=self.n):
            block = corners[tuple(slice(o, o + self.cells) for o in offset)]
            np.minimum(cmin, block, out=cmin)
            np.maximum(cmax, block, out=cmax)
        self.cell_min = cmin.ravel()
        self.cell_max = cmax.ravel()

        # Outermost layer of cells, for the coverage check.
        index = np.indices((self.cells,) * self.n).reshape(self.n, -1).T
        self.outer = np.any((index == 0) | (index == self.cells - 1), axis=1)

        sub = (np.arange(self.refine) + 0.5) / self.refine - 0.5
        self.sub_offsets = np.stack(
            [m.ravel() for m in np.meshgrid(*([sub] * self.n), indexing="ij")], axis=-1
        ) * self.width

    def check_coverage(self, level: float):
        if np.any(self.cell_min[self.outer] < level):
            raise CoverageError(
                f"Sublevel set {{V < {level:g}}} touches the quadrature box "
                f"(half width {self.P.half_width:g}); enlarge half_width"
            )

    def crossing(self, level: float) -> np.ndarray:
        return (self.cell_min < level) & (self.cell_max >= level)

    def _refined(self, cells: np.ndarray):
        """Yield sub-cell midpoints of the given coarse cells, chunked."""
        for start in range(0, cells.size, self.CHUNK):
            chunk = self.centers[cells[start:start + self.CHUNK]]
            points = (chunk[:, None, :] + self.sub_offsets[None, :, :]).reshape(-1, self.n)
            yield points

    def integrate(self, level: float,
                  integrand: Callable[[np.ndarray, Optional[np.ndarray]], np.ndarray],
                  needs_points: bool = False) -> Tuple[float, float]:
        """
        Integral of integrand(V, points) over the box.

        Returns:
            (value, err_est) where err_est is the change the refinement made
            to the crossing cells.
        """
        self.check_coverage(level)
        crossing = self.crossing(level)
        interior = ~crossing
        centers = self.centers[interior] if needs_points else None
        coarse_in = integrand(self.center_values[interior], centers)
        total = float(np.sum(coarse_in)) * self.cell_volume

        cells = np.flatnonzero(crossing)
        coarse_cross = integrand(self.center_values[cells],
                                 self.centers[cells] if needs_points else None)
        fine = 0.0
        sub_volume = self.cell_volume / self.sub_offsets.shape[0]
        for points in self._refined(cells):
            fine += float(np.sum(integrand(self.P.values(points), points if needs_points else None)))
        fine *= sub_volume
        coarse = float(np.sum(coarse_cross)) * self.cell_volume
        return total + fine, abs(fine - coarse)

    def samples(self, level: float) -> Tuple[np.ndarray, np.ndarray]:
        """All (V, weight) samples of the rule refined at `level`."""
        self.check_coverage(level)
        crossing = self.crossing(level)
        values = [self.center_values[~crossing]]
        weights = [np.full(int(np.count_nonzero(~crossing)), self.cell_volume)]
        sub_volume = self.cell_volume / self.sub_offsets.shape[0]
        for points in self._refined(np.flatnonzero(crossing)):
            v = self.P.values(points)
            values.append(v)
            weights.append(np.full(v.size, sub_volume))
        return np.concatenate(values), np.concatenate(weights)

    def centroid(self, level: float) -> np.ndarray:
        """Centroid of {V < level} from the coarse cells."""
        inside = self.center_values < level
        if not np.any(inside):
            return self.P.center.copy()
        return self.centers[inside].mean(axis=0)


def _phase_integrand(P: AnalyticPotential, lam: float, weight: str):
    half_n = P.n / 2

    def integrand(values, points):
        base = np.clip(lam - values, 0.0, None) ** half_n
        if weight == "grad-squared":
            return base * P.grad_squared(points)
        return base

    return integrand


def phase_space_integral_oracle(P: AnalyticPotential, lam: float, weight: str = "one",
                                quad: QuadratureParams = QuadratureParams(),
                                sampler: Optional[BoxQuadrature] = None) -> QuadratureResult:
    """
    Spatial form of the trace invariants:
      weight "one":          int_{V<lam} (lam - V)^{n/2} dx
      weight "grad-squared": int_{V<lam} |grad V|^2 (lam - V)^{n/2} dx
    The phase-space integral over {|xi|^2 + V < lam} is omega_n times this value.

    Raises:
        CoverageError if {V < lam} reaches the box boundary
    """
    if weight not in WEIGHTS:
        raise ValueError(f"weight must be one of {WEIGHTS}, got {weight!r}")
    if not 0 < lam <= P.lambda0 * (1 + 1e-12):
        raise DomainError(f"lambda must lie in (0, {P.lambda0:g}], got {lam:g}")
    sampler = sampler or BoxQuadrature(P, quad)
    value, err = sampler.integrate(lam, _phase_integrand(P, lam, weight),
                                   needs_points=weight == "grad-squared")
    return QuadratureResult(value, err, unit_ball_volume(P.n), P.gradient_method)


def sublevel_volume_oracle(P: AnalyticPotential, s: float,
                           quad: QuadratureParams = QuadratureParams(),
                           sampler: Optional[BoxQuadrature] = None) -> QuadratureResult:
    """Lebesgue measure of {V < s}."""
    if not 0 < s <= P.lambda0 * (1 + 1e-12):
        raise DomainError(f"s must lie in (0, {P.lambda0:g}], got {s:g}")
    sampler = sampler or BoxQuadrature(P, quad)
    value, err = sampler.integrate(s, lambda values, _: (values < s).astype(float))
    return QuadratureResult(value, err, unit_ball_volume(P.n), P.gradient_method)


# ---------------------------------------------------------------------------
# Level-surface invariants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LevelSetResult:
    """I1 = int |grad V|^-1 dS, I2 = int |grad V| dS and the surface area."""
    s: float
    I1: float
    I2: float
    area: float
    err_est: float
    min_grad: float
    max_grad: float
    method: str


def _polyline_integrals(P: AnalyticPotential, lines: List[np.ndarray], s: float):
    I1 = I2 = area = 0.0
    gmin, gmax = math.inf, 0.0
    for line in lines:
        if len(line) < 2:
            continue
        segments = np.diff(line, axis=0)
        lengths = np.linalg.norm(segments, axis=1)
        mids = 0.5 * (line[1:] + line[:-1])
        grad = np.sqrt(P.grad_squared(mids))
        if np.any(grad < NEAR_CRITICAL_GRAD):
            raise NearCriticalError(f"|grad V| < {NEAR_CRITICAL_GRAD:g} on the level set V = {s:g}")
        I1 += float(np.sum(lengths / grad))
        I2 += float(np.sum(lengths * grad))
        area += float(np.sum(lengths))
        gmin = min(gmin, float(grad.min()))
        gmax = max(gmax, float(grad.max()))
    if area == 0.0:
        raise NearCriticalError(f"Level set V = {s:g} is empty at the contour resolution")
    return I1, I2, area, gmin, gmax


def _contour_level_set(P: AnalyticPotential, s: float, points: int):
    lo, hi = P.box
    x = np.linspace(lo[0], hi[0], points)
    y = np.linspace(lo[1], hi[1], points)
    X, Y = np.meshgrid(x, y, indexing="xy")
    Z = P.values(np.stack([X, Y], axis=-1))
    edge = np.concatenate([Z[0, :], Z[-1, :], Z[:, 0], Z[:, -1]])
    if np.any(edge <= s):
        raise CoverageError(f"Level set V = {s:g} reaches the box boundary")
    lines = contour_generator(x, y, Z, line_type=LineType.Separate).lines(s)
    return _polyline_integrals(P, lines, s)


def _sphere_rule(n: int, nodes: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Product quadrature on S^{n-1} in hyperspherical angles:
    Gauss-Legendre in theta_1..theta_{n-2} on [0, pi] with sin^{n-1-k} weights,
    uniform in phi on [0, 2 pi).
    """
    t, w = np.polynomial.legendre.leggauss(nodes)
    theta = 0.5 * math.pi * (t + 1)
    w_theta = 0.5 * math.pi * w
    phi_count = 2 * nodes
    phi = 2 * math.pi * np.arange(phi_count) / phi_count
    w_phi = np.full(phi_count, 2 * math.pi / phi_count)

    grids = [theta] * (n - 2) + [phi]
    mesh = np.meshgrid(*grids, indexing="ij")
    angles = [m.ravel() for m in mesh]
    weight_mesh = np.meshgrid(*([w_theta] * (n - 2) + [w_phi]), indexing="ij")
    weights = np.prod([m.ravel() for m in weight_mesh], axis=0)

    directions = np.ones((angles[0].size, n))
    sin_prod = np.ones(angles[0].size)
    for k in range(n - 2):
        directions[:, k] = sin_prod * np.cos(angles[k])
        weights = weights * np.sin(angles[k]) ** (n - 2 - k)
        sin_prod = sin_prod * np.sin(angles[k])
    directions[:, n - 2] = sin_prod * np.cos(angles[-1])
    directions[:, n - 1] = sin_prod * np.sin(angles[-1])
    return directions, weights


def _ray_level_set(P: AnalyticPotential, s: float, center: np.ndarray, nodes: int,
                   ray_samples: int = 48, iterations: int = 60):
    """Star-shaped extraction: r(u) with V(center + r u) = s for every direction u."""
    directions, weights = _sphere_rule(P.n, nodes)
    if P.values(center) >= s:
        raise UnsupportedGeometryError(f"Detected center is not inside {{V < {s:g}}}")
    lo, hi = P.box
    with np.errstate(divide="ignore"):
        to_hi = np.where(directions > 0, (hi - center) / directions, np.inf)
        to_lo = np.where(directions < 0, (lo - center) / directions, np.inf)
    t_max = np.minimum(to_hi.min(axis=1), to_lo.min(axis=1))

    fractions = np.arange(1, ray_samples + 1) / ray_samples
    ts = t_max[:, None] * fractions[None, :]
    samples = P.values(center + ts[..., None] * directions[:, None, :]) - s
    if np.any(samples[:, -1] < 0):
        raise CoverageError(f"Level set V = {s:g} reaches the box boundary")
    signs = np.signbit(np.concatenate([np.full((len(directions), 1), -1.0), samples], axis=1))
    changes = np.count_nonzero(signs[:, 1:] != signs[:, :-1], axis=1)
    if np.any(changes != 1):
        raise UnsupportedGeometryError(
            f"Level set V = {s:g} is not star-shaped about {np.round(center, 6).tolist()}"
        )
    first = np.argmax(samples >= 0, axis=1)
    r_hi = ts[np.arange(len(ts)), first]
    r_lo = np.where(first > 0, ts[np.arange(len(ts)), np.maximum(first - 1, 0)], 0.0)
    for _ in range(iterations):
        mid = 0.5 * (r_lo + r_hi)
        above = P.values(center + mid[:, None] * directions) >= s
        r_hi = np.where(above, mid, r_hi)
        r_lo = np.where(above, r_lo, mid)
    r = 0.5 * (r_lo + r_hi)

    points = center + r[:, None] * directions
    grad = P.gradients(points)
    gnorm = np.linalg.norm(grad, axis=1)
    if np.any(gnorm < NEAR_CRITICAL_GRAD):
        raise NearCriticalError(f"|grad V| < {NEAR_CRITICAL_GRAD:g} on the level set V = {s:g}")
    radial = np.sum(grad * directions, axis=1)
    if np.any(radial <= 0):
        raise UnsupportedGeometryError(f"Level set V = {s:g} is not transversal to the rays")
    jac = weights * r ** (P.n - 1) / radial
    I1 = float(np.sum(jac))
    I2 = float(np.sum(jac * gnorm ** 2))
    area = float(np.sum(jac * gnorm))
    return I1, I2, area, float(gnorm.min()), float(gnorm.max())


def level_surface_invariants_oracle(P: AnalyticPotential, s: float,
                                    quad: QuadratureParams = QuadratureParams(),
                                    sampler: Optional[BoxQuadrature] = None) -> LevelSetResult:
    """
    I1(s) = int_{V=s} |grad V|^-1 dS and I2(s) = int_{V=s} |grad V| dS.

    2-D: marching-squares contours; n >= 3: ray shooting from the sublevel
    centroid over a product rule on the sphere. err_est compares against the
    same extraction at half resolution.

    Raises:
        NearCriticalError if |grad V| < 1e-10 at a surface sample
        UnsupportedGeometryError if the level set is not star-shaped (n >= 3)
    """
    if not 0 < s < P.lambda0 * (1 + 1e-12):
        raise DomainError(f"s must lie in (0, {P.lambda0:g}), got {s:g}")
    if P.n == 2:
        fine = _contour_level_set(P, s, quad.contour_points)
        coarse = _contour_level_set(P, s, quad.contour_points // 2 + 1)
        method = "contour"
    else:
        sampler = sampler or BoxQuadrature(P, QuadratureParams(cells_3d=32, cells_nd=12, refine=1))
        center = sampler.centroid(s)
        nodes = quad.angular_nodes if P.n == 3 else max(8, quad.angular_nodes // 2)
        fine = _ray_level_set(P, s, center, nodes)
        coarse = _ray_level_set(P, s, center, max(4, nodes // 2))
        method = "ray"
    I1, I2, area, gmin, gmax = fine
    err = max(abs(I1 - coarse[0]), abs(I2 - coarse[1]), abs(area - coarse[2]))
    return LevelSetResult(s, I1, I2, area, err, gmin, gmax, method)


def regular_values(P: AnalyticPotential, s_values: Sequence[float],
                   quad: QuadratureParams = QuadratureParams()) -> List[float]:
    """
    Levels whose extracted level set satisfies min|grad V| >= 1e-6 max|grad V|.
    Levels that fail extraction as near-critical are dropped as well.
    """
    kept = []
    for s in s_values:
        try:
            result = level_surface_invariants_oracle(P, s, quad)
        except NearCriticalError:
            logger.info(f"Excluding near-critical level s={s:g}")
            continue
        if result.min_grad < REGULAR_VALUE_RATIO * result.max_grad:
            logger.info(f"Excluding level s={s:g}: min|grad V| {result.min_grad:.3g}")
            continue
        kept.append(float(s))
    return kept


def closed_form_surface_invariants(P: AnalyticPotential, s: float) -> Tuple[float, float, float]:
    """
    (volume, I1, I2) in closed form for quadratic and radial families, from
    vol{V<s}, I1 = d vol/ds and, by the divergence theorem, I2 = int_{V<s} Laplacian V.
    """
    n = P.n
    omega = unit_ball_volume(n)
    if P.family in ("harmonic", "anisotropic"):
        weights = np.ones(n) if P.family == "harmonic" else np.asarray(P.params)
        scale = 1.0 / math.sqrt(float(np.prod(weights)))
        volume = omega * s ** (n / 2) * scale
        I1 = omega * (n / 2) * s ** (n / 2 - 1) * scale
        I2 = 2 * float(np.sum(weights)) * volume
        return volume, I1, I2
    if P.family == "radial":
        rho = float(P.profile.inverse(s))
        slope = float(P.profile.derivative(rho))
        sphere = n * omega * rho ** (n - 1)
        return omega * rho ** n, sphere / slope, sphere * slope
    raise ValueError(f"No closed form for family {P.family!r}")


# ---------------------------------------------------------------------------
# Pushforward measure
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PushforwardDensity:
    """Histogram density of V_* dx on (0, lambda0) with suspected atoms."""
    density: Curve
    bin_mass: np.ndarray
    atoms: Tuple[float, ...] = field(default_factory=tuple)

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.bin_mass))


def pushforward_density(P: AnalyticPotential, bins: int = 50,
                        quad: QuadratureParams = QuadratureParams(),
                        atom_factor: float = 10.0, window: int = 3,
                        sampler: Optional[BoxQuadrature] = None) -> PushforwardDensity:
    """
    Density of the pushforward of Lebesgue measure by V on (0, lambda0).

    A bin whose mass exceeds atom_factor times the median of its neighbours
    (window bins either side) is flagged as a suspected atom: a set of
    positive measure on which V is constant.
    """
    if bins < 10:
        raise ValueError(f"bins must be >= 10, got {bins}")
    sampler = sampler or BoxQuadrature(P, quad)
    level = P.lambda0
    values, weights = sampler.samples(level)
    below = values < level
    mass, edges = np.histogram(values[below], bins=bins, range=(0.0, level), weights=weights[below])
    width = edges[1] - edges[0]

    floor = 1e-12 * max(float(mass.sum()), 1e-300)
    atoms = []
    for i in range(bins):
        neighbours = np.concatenate([mass[max(0, i - window):i], mass[i + 1:i + 1 + window]])
        reference = max(float(np.median(neighbours)), floor)
        if mass[i] > atom_factor * reference:
            atoms.append(float(0.5 * (edges[i] + edges[i + 1])))
    if atoms:
        logger.warning(f"Suspected atoms of V_*dx at s = {', '.join(f'{a:.4g}' for a in atoms)}")

    density = Curve(edges[0] + width / 2, edges[-1] - width / 2, mass / width, "pushforward_density")
    return PushforwardDensity(density, mass, tuple(atoms))


# ---------------------------------------------------------------------------
# Oracle curves
# ---------------------------------------------------------------------------

def _parallel_map(fn, items):
    with ThreadPoolExecutor(max_workers=Config.WORKERS) as pool:
        return list(pool.map(fn, items))


def phase_space_curve(P: AnalyticPotential, lambda_max: float, points: int, weight: str,
                      quad: QuadratureParams = QuadratureParams(),
                      sampler: Optional[BoxQuadrature] = None) -> Curve:
    """A(lambda) (weight one) or B(lambda) (grad-squared) on linspace(0, lambda_max, points)."""
    sampler = sampler or BoxQuadrature(P, quad)
    grid = np.linspace(0.0, lambda_max, points)

    def one(lam):
        if lam <= 0:
            return 0.0, 0.0
        result = phase_space_integral_oracle(P, lam, weight, quad, sampler)
        return result.value, result.err_est

    results = _parallel_map(one, grid)
    label = "A" if weight == "one" else "B"
    return Curve(0.0, lambda_max, [r[0] for r in results], label, [r[1] for r in results],
                 {"provenance": "oracle", "omega_n": repr(unit_ball_volume(P.n))})


def volume_curve(P: AnalyticPotential, s_max: float, points: int,
                 quad: QuadratureParams = QuadratureParams(),
                 sampler: Optional[BoxQuadrature] = None) -> Curve:
    sampler = sampler or BoxQuadrature(P, quad)
    grid = np.linspace(0.0, s_max, points)

    def one(s):
        if s <= 0:
            return 0.0, 0.0
        result = sublevel_volume_oracle(P, s, quad, sampler)
        return result.value, result.err_est

    results = _parallel_map(one, grid)
    return Curve(0.0, s_max, [r[0] for r in results], "volume", [r[1] for r in results],
                 {"provenance": "oracle"})


def surface_invariant_curves(P: AnalyticPotential, s_min: float, s_max: float, points: int,
                             quad: QuadratureParams = QuadratureParams()) -> Dict[str, Curve]:
    """I1, I2 and area curves on linspace(s_min, s_max, points); s_min > 0."""
    grid = np.linspace(s_min, s_max, points)
    results = _parallel_map(lambda s: level_surface_invariants_oracle(P, s, quad), grid)
    err = [r.err_est for r in results]
    meta = {"provenance": "oracle"}
    return {
        "I1": Curve(s_min, s_max, [r.I1 for r in results], "I1", err, meta),
        "I2": Curve(s_min, s_max, [r.I2 for r in results], "I2", err, meta),
        "area": Curve(s_min, s_max, [r.area for r in results], "area", err, meta),
    }


def write_oracle_curves(P: AnalyticPotential, out_dir, lambda_max: float, lambda_points: int,
                        s_points: int, quad: QuadratureParams = QuadratureParams()) -> Dict[str, Curve]:
    """
    Write the oracle curves A, B, volume, I1, I2 as <out_dir>/<name>.csv.

    Level-surface curves start one grid step above 0, where the level set is a point.
    """
    out_dir = Path(out_dir)
    logger.info(f"Oracle curves for {P.family} n={P.n} up to lambda={lambda_max:g}")
    sampler = BoxQuadrature(P, quad)
    curves = {
        "A": phase_space_curve(P, lambda_max, lambda_points, "one", quad, sampler),
        "B": phase_space_curve(P, lambda_max, lambda_points, "grad-squared", quad, sampler),
        "volume": volume_curve(P, lambda_max, s_points, quad, sampler),
    }
    s_step = lambda_max / (s_points - 1)
    surface = surface_invariant_curves(P, s_step, lambda_max, s_points - 1, quad)
    curves["I1"] = surface["I1"]
    curves["I2"] = surface["I2"]
    for name, curve in curves.items():
        write_curve(out_dir / f"{name}.csv", curve)
    return curves
