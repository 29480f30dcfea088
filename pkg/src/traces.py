"""
Smoothed traces and their small-h expansion.

For a test function f, (2 pi h)^n sum_j f(E_j(h)) = a0 + a2 h^2 + O(h^4).
With f a smoothed step at lambda, a0 recovers omega_n A(lambda) and a2 the
third derivative of G(lambda) = omega_n B(lambda):

    a2(lambda) = -(1/12) (G''' mollified)(lambda)

Fitting (a0, a2) across several h at every lambda of a grid yields the curves
A_est and B_est the inversion stage consumes.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial import Polynomial
from scipy.integrate import cumulative_trapezoid

from src.abel import tikhonov_solve
from src.config import Config
from src.errors import ArtifactError, InsufficientDataError, NumericalError, TruncationError
from src.lib.artifacts import column, read_csv, write_csv
from src.lib.curves import Curve
from src.logger import get_logger
from src.spectra import Spectrum, count_below
from src.transforms.geometry import unit_ball_volume

logger = get_logger('traces')

# 35 t^4 - 84 t^5 + 70 t^6 - 20 t^7: the degree-7 step with three vanishing
# derivatives at both ends
SMOOTHSTEP = Polynomial([0, 0, 0, 0, 35, -84, 70, -20])
CONDITION_WARNING = 1e8
A2_NOISE_RATIO = 0.1
# semiclassical regime: the largest h must stay under this fraction of eps
COARSE_H_RATIO = 0.25
# smallest median remainder exponent accepted without a warning (4 expected)
REMAINDER_ORDER_MIN = 3.5
INVARIANTS_HEADER = ("lambda", "A_est", "a2", "B_est", "residual", "flags")


@dataclass(frozen=True)
class Mollifier:
    """f = 1 below center - eps, 0 above center + eps, C^3 smoothstep between."""
    center: float
    eps: float

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"Mollifier half-width must be > 0, got {self.eps}")

    @property
    def support_max(self) -> float:
        return self.center + self.eps

    def _t(self, s):
        return np.clip((np.asarray(s, dtype=float) - (self.center - self.eps)) / (2 * self.eps), 0.0, 1.0)

    def __call__(self, s):
        return 1.0 - SMOOTHSTEP(self._t(s))

    def derivative(self, s, order: int = 1):
        """f^(k)(s) = -S^(k)(t) / (2 eps)^k on the transition, 0 elsewhere."""
        s = np.asarray(s, dtype=float)
        t = (s - (self.center - self.eps)) / (2 * self.eps)
        inside = (t > 0) & (t < 1)
        value = -SMOOTHSTEP.deriv(order)(np.clip(t, 0.0, 1.0)) / (2 * self.eps) ** order
        return np.where(inside, value, 0.0)

    @staticmethod
    def shape_constant(order: int = 3) -> float:
        """max |S^(k)| on [0, 1]; |f^(k)| <= shape_constant(k) / (2 eps)^k."""
        d = SMOOTHSTEP.deriv(order)
        candidates = [0.0, 1.0] + [r.real for r in d.deriv().roots() if abs(r.imag) < 1e-12 and 0 <= r.real <= 1]
        return float(max(abs(d(x)) for x in candidates))

    def derivative_bound(self, order: int = 3) -> float:
        return self.shape_constant(order) / (2 * self.eps) ** order


@dataclass(frozen=True, eq=False)
class HFit:
    """Least-squares fit of (2 pi h)^n T(h) = a0 + a2 h^2."""
    h: Tuple[float, ...]
    values: Tuple[float, ...]
    a0: float
    a2: float
    residual_rms: float
    condition: float
    a0_stderr: float = 0.0
    a2_stderr: float = 0.0
    flags: Tuple[str, ...] = field(default_factory=tuple)

    def residuals(self) -> np.ndarray:
        h = np.asarray(self.h)
        return np.asarray(self.values) - self.a0 - self.a2 * h * h


def smoothed_trace(spec: Spectrum, f: Mollifier) -> float:
    """
    sum_j mult_j f(E_j).

    Raises:
        TruncationError if f is not identically 0 above spec.lambda_max
    """
    if f.support_max > spec.lambda_max * (1 + 1e-12):
        raise TruncationError(
            f"Test function support reaches {f.support_max:g} beyond the spectrum range "
            f"{spec.lambda_max:g} (h={spec.h:g})"
        )
    if not len(spec):
        return 0.0
    return float(np.dot(spec.multiplicities, f(spec.energies)))


def fit_h_expansion(traces: Sequence[Tuple[float, float]], n: int) -> HFit:
    """
    Fit a0, a2 to (2 pi h)^n T(h) over the given (h, T) pairs.

    Raises:
        InsufficientDataError with fewer than 3 distinct h or a span below 2x
    """
    pairs = sorted(traces, key=lambda pair: -pair[0])
    h = np.array([p[0] for p in pairs], dtype=float)
    if np.unique(h).size < 3:
        raise InsufficientDataError(f"Need >= 3 distinct h values, got {np.unique(h).size}")
    if h.max() < 2 * h.min():
        raise InsufficientDataError(f"h values must span a factor of 2, got [{h.min():g}, {h.max():g}]")
    y = (2 * math.pi * h) ** n * np.array([p[1] for p in pairs], dtype=float)

    design = np.column_stack([np.ones_like(h), h * h])
    condition = float(np.linalg.cond(design))
    # Solve on a unit-scaled h^2 column; the reported condition is the raw design's
    scale = float(h.max() ** 2)
    coef, *_ = np.linalg.lstsq(design / [1.0, scale], y, rcond=None)
    a0, a2 = float(coef[0]), float(coef[1] / scale)
    resid = y - a0 - a2 * h * h
    rms = float(np.sqrt(np.mean(resid ** 2)))

    dof = h.size - 2
    stderr = (0.0, 0.0)
    if dof > 0:
        cov = np.linalg.pinv(design.T @ design) * float(resid @ resid) / dof
        stderr = (float(np.sqrt(max(cov[0, 0], 0.0))), float(np.sqrt(max(cov[1, 1], 0.0))))

    flags = []
    if condition > CONDITION_WARNING:
        flags.append("ill-conditioned")
        logger.warning(f"h-fit design condition {condition:.3g} exceeds {CONDITION_WARNING:g}")
    if stderr[1] > A2_NOISE_RATIO * abs(a2):
        flags.append("a2-noisy")
    return HFit(tuple(h), tuple(y), a0, a2, rms, condition, stderr[0], stderr[1], tuple(flags))


def _check_spectra(spectra: Sequence[Spectrum], lambda_grid: np.ndarray, eps: float) -> Tuple[str, ...]:
    """Raises on unusable input; returns warning flags for usable but doubtful input."""
    if not spectra:
        raise InsufficientDataError("No spectra supplied")
    n = {s.n for s in spectra}
    if len(n) != 1:
        raise NumericalError(f"Spectra mix dimensions {sorted(n)}")
    top = min(s.lambda_max for s in spectra)
    if lambda_grid[-1] + eps > top * (1 + 1e-12):
        raise TruncationError(f"lambda grid end {lambda_grid[-1]:g} + eps {eps:g} exceeds spectrum range {top:g}")
    steps = np.diff(lambda_grid)
    if lambda_grid[0] != 0 or steps.size == 0 or not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
        raise NumericalError("lambda grid must be uniform and start at 0")
    h_max = max(s.h for s in spectra)
    if h_max > COARSE_H_RATIO * eps:
        logger.warning(
            f"Largest h {h_max:g} exceeds {COARSE_H_RATIO:g} * eps = {COARSE_H_RATIO * eps:g}; "
            f"the h^2 expansion is not in its asymptotic regime"
        )
        return ("coarse-h",)
    return ()


def _fit_grid(spectra: Sequence[Spectrum], grid: np.ndarray, eps: float) -> Tuple[List[HFit], Tuple[str, ...]]:
    flags = _check_spectra(spectra, grid, eps)
    n = spectra[0].n

    def fit_one(lam):
        f = Mollifier(float(lam), eps)
        return fit_h_expansion([(s.h, smoothed_trace(s, f)) for s in spectra], n)

    with ThreadPoolExecutor(max_workers=Config.WORKERS) as pool:
        return list(pool.map(fit_one, grid)), flags


def fit_grid(spectra: Sequence[Spectrum], lambda_grid: Sequence[float], eps: float) -> List[HFit]:
    """One HFit per lambda, computed concurrently and returned in grid order."""
    fits, _ = _fit_grid(spectra, np.asarray(lambda_grid, dtype=float), eps)
    return fits


def _first_invariant(fits: List[HFit], grid: np.ndarray, n: int) -> Curve:
    omega = unit_ball_volume(n)
    a0 = np.array([fit.a0 for fit in fits])
    err = np.array([fit.a0_stderr for fit in fits]) / omega
    A = a0 / omega
    if np.any(np.diff(A) < -np.maximum(err[1:], 1e-12)):
        logger.warning("A_est decreases beyond its fit error; extraction noise is high")
    return Curve(grid[0], grid[-1], A, "A", err, {"provenance": "spectral", "omega_n": repr(omega)})


def triple_antiderivative(values: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Three cumulative trapezoid integrals from grid[0] with zero initial data."""
    out = values
    for _ in range(3):
        out = cumulative_trapezoid(out, grid, initial=0.0)
    return out


def bump_basis_third_derivative(a2: np.ndarray, grid: np.ndarray, eps: float, weight: float) -> np.ndarray:
    """
    G''' on the grid from a2(lambda_i) = -(1/12) int -f'_{lambda_i}(s) G'''(s) ds,
    with G''' piecewise linear on the grid extended past its end by eps and a
    curvature-penalized least-squares solve.
    """
    step = grid[1] - grid[0]
    extra = int(math.ceil(eps / step))
    nodes = grid[0] + step * np.arange(grid.size + extra)
    fine = np.linspace(nodes[0], nodes[-1], 16 * (nodes.size - 1) + 1)
    quad = np.full(fine.size, fine[1] - fine[0])
    quad[[0, -1]] *= 0.5
    hats = np.clip(1.0 - np.abs(fine[:, None] - nodes[None, :]) / step, 0.0, None)
    kernel = np.stack([-Mollifier(float(lam), eps).derivative(fine) for lam in grid])
    K = (kernel * quad) @ hats
    g = tikhonov_solve(K, -12.0 * a2, weight)
    return g[:grid.size]


def _second_invariant(fits: List[HFit], grid: np.ndarray, n: int, eps: float,
                      method: str = "antiderivative", weight: float = 1e-6) -> Curve:
    omega = unit_ball_volume(n)
    a2 = np.array([fit.a2 for fit in fits])
    if method == "antiderivative":
        G = -12.0 * triple_antiderivative(a2, grid)
    elif method == "bump-basis":
        G = triple_antiderivative(bump_basis_third_derivative(a2, grid, eps, weight), grid)
    else:
        raise ValueError(f"Unknown second invariant method {method!r}")
    a2_err = np.array([fit.a2_stderr for fit in fits])
    err = 12.0 * triple_antiderivative(a2_err, grid) / omega
    noisy = sum("a2-noisy" in fit.flags for fit in fits)
    if noisy:
        logger.warning(f"a2 fit error above {A2_NOISE_RATIO:.0%} of |a2| at {noisy} of {grid.size} lambda values")
    meta = {"provenance": "spectral", "omega_n": repr(omega), "method": method}
    return Curve(grid[0], grid[-1], G / omega, "B", err, meta)


def extract_first_invariant(spectra: Sequence[Spectrum], lambda_grid: Sequence[float], eps: float) -> Curve:
    """A_est(lambda) = a0(lambda) / omega_n on a uniform grid starting at 0."""
    grid = np.asarray(lambda_grid, dtype=float)
    return _first_invariant(fit_grid(spectra, grid, eps), grid, spectra[0].n)


def extract_second_invariant(spectra: Sequence[Spectrum], lambda_grid: Sequence[float], eps: float,
                             method: str = "antiderivative", weight: float = 1e-6) -> Curve:
    """B_est(lambda) = -12 * (triple antiderivative of a2) / omega_n."""
    grid = np.asarray(lambda_grid, dtype=float)
    return _second_invariant(fit_grid(spectra, grid, eps), grid, spectra[0].n, eps, method, weight)


@dataclass(frozen=True, eq=False)
class ExtractedInvariants:
    A: Curve
    B: Curve
    fits: Tuple[HFit, ...]
    flags: Tuple[str, ...] = ()
    remainder_order: Optional[float] = None

    @property
    def a2(self) -> np.ndarray:
        return np.array([fit.a2 for fit in self.fits])

    def summary(self) -> Dict[str, Any]:
        """Run-level diagnostics for the extraction manifest."""
        return {
            "flags": list(self.flags),
            "remainder_order": self.remainder_order,
            "h": list(self.fits[0].h) if self.fits else [],
            "lambda_points": len(self.fits),
        }


def extract_invariants(spectra: Sequence[Spectrum], lambda_grid: Sequence[float], eps: float,
                       method: str = "antiderivative", weight: float = 1e-6) -> ExtractedInvariants:
    """Both invariant curves from one pass of h-fits."""
    grid = np.asarray(lambda_grid, dtype=float)
    n = spectra[0].n
    logger.info(f"Extracting invariants: {len(spectra)} spectra, {grid.size} lambda values, eps={eps:g}")
    fits, flags = _fit_grid(spectra, grid, eps)
    A = _first_invariant(fits, grid, n)
    B = _second_invariant(fits, grid, n, eps, method, weight)
    order = remainder_order(fits)
    if order is not None and order < REMAINDER_ORDER_MIN:
        logger.warning(f"Median remainder order {order:.2f} is below {REMAINDER_ORDER_MIN:g}; a2 is unreliable")
        flags += ("low-remainder-order",)
    return ExtractedInvariants(A, B, tuple(fits), flags, order)


def write_invariants(path: Path, extracted: ExtractedInvariants) -> Path:
    """CSV lambda,A_est,a2,B_est,residual,flags."""
    rows = (
        (lam, a, fit.a2, b, fit.residual_rms, ";".join(fit.flags))
        for lam, a, b, fit in zip(extracted.A.grid, extracted.A.values, extracted.B.values, extracted.fits)
    )
    return write_csv(path, INVARIANTS_HEADER, rows)


def read_invariants(path: Path) -> Tuple[Curve, Curve]:
    """(A, B) curves from an invariants CSV."""
    rows = read_csv(path)
    if len(rows) < 2:
        raise ArtifactError(f"Invariant file {path} has fewer than 2 rows")
    lam = column(rows, "lambda", path)
    meta = {"provenance": "spectral"}
    A = Curve(lam[0], lam[-1], column(rows, "A_est", path), "A", None, meta)
    B = Curve(lam[0], lam[-1], column(rows, "B_est", path), "B", None, meta)
    return A, B


def weyl_ratio(spec: Spectrum, lam: float, phase_volume: float) -> float:
    """(2 pi h)^n N(lambda) / (omega_n A(lambda)), with phase_volume = A(lambda) in space."""
    if phase_volume <= 0:
        raise NumericalError("Weyl ratio needs a positive phase-space volume")
    return (2 * math.pi * spec.h) ** spec.n * count_below(spec, lam) / (unit_ball_volume(spec.n) * phase_volume)


def residual_order(fit: HFit) -> float:
    """
    Remainder exponent p from extrapolation residuals: each sample minus the
    [1, h^2] line through the next two finer samples, regressed as log|e| ~ p log h.
    """
    h = np.asarray(fit.h, dtype=float)
    y = np.asarray(fit.values, dtype=float)
    order = np.argsort(-h)
    h, y = h[order], y[order]
    if h.size < 4:
        raise InsufficientDataError(f"Residual order needs >= 4 h values, got {h.size}")
    x = h * h
    e = []
    hs = []
    for i in range(h.size - 2):
        slope = (y[i + 2] - y[i + 1]) / (x[i + 2] - x[i + 1])
        predicted = y[i + 1] + slope * (x[i] - x[i + 1])
        if y[i] != predicted:
            e.append(abs(y[i] - predicted))
            hs.append(h[i])
    if len(e) < 2:
        raise InsufficientDataError("Extrapolation residuals vanish; the remainder order is undefined")
    p, _ = np.polyfit(np.log(hs), np.log(e), 1)
    return float(p)


def remainder_order(fits: Sequence[HFit]) -> Optional[float]:
    """
    Median residual_order over the fits that support one; None with fewer
    than 4 h values or when no fit does.
    """
    orders = []
    for fit in fits:
        try:
            orders.append(residual_order(fit))
        except InsufficientDataError:
            continue
    if not orders:
        return None
    return float(np.median(orders))


def default_h_grid(lambda0: float, count: int = 6, ratio: float = 0.5, fraction: float = 0.05) -> List[float]:
    """Geometric h-grid h0 * ratio^k from h0 = fraction * lambda0."""
    h0 = fraction * lambda0
    return [h0 * ratio ** k for k in range(count)]


def lambda_grid(lambda_max: float, points: int) -> np.ndarray:
    return np.linspace(0.0, lambda_max, points)
