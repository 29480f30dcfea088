"""
Riemann-Liouville fractional integration and the inversions built on it.

    J^a g(x) = 1/Gamma(a) * int_0^x (x - s)^(a - 1) g(s) ds

The sublevel volume v(s) and the phase-space invariant A(lambda) are related by
A = Gamma(n/2 + 1) J^{n/2} v, and the second invariant B by the same kernel
applied to W(s) = int_0^s I2. Inverting that relation turns spectral data into
level-set geometry.
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.signal import convolve, savgol_filter
from scipy.special import gamma
from sklearn.isotonic import isotonic_regression

from src.config import InversionConfig
from src.errors import ConfigurationError, NumericalError, RegularizationError
from src.lib.curves import Curve
from src.logger import get_logger

logger = get_logger('abel')

MAX_ORDER = 12.0
CONDITION_LIMIT = 1e14


@dataclass(frozen=True)
class FracOrder:
    alpha: float

    def __post_init__(self):
        if not 0 < self.alpha <= MAX_ORDER:
            raise ConfigurationError(f"Fractional order must lie in (0, {MAX_ORDER:g}], got {self.alpha}")


Order = Union[FracOrder, float]


def _alpha(order: Order) -> float:
    alpha = order.alpha if isinstance(order, FracOrder) else float(order)
    if alpha == 0:
        return 0.0
    return FracOrder(alpha).alpha


def _require_origin(g: Curve):
    if g.grid_min != 0.0:
        raise NumericalError(f"Curve '{g.label}' must be sampled from 0, starts at {g.grid_min:g}")


def product_weights(alpha: float, size: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Product-integration weights for piecewise-linear integrands, without the
    dr^alpha / Gamma(alpha + 2) factor.

    Returns:
        (w, start) with w[m] the weight of g_{k-m} for m = k - j >= 0 (j >= 1),
        and start[k] the weight of g_0 in row k.
    """
    power = alpha + 1
    m = np.arange(size, dtype=float)
    w = np.ones(size)
    with np.errstate(divide="ignore"):
        inv = 1.0 / m[1:]
        # (m+1)^p + (m-1)^p - 2 m^p, factored to limit cancellation
        w[1:] = m[1:] ** power * (np.expm1(power * np.log1p(inv)) + np.expm1(power * np.log1p(-inv)))
    k = m[1:]
    start = np.zeros(size)
    # (k-1)^p - (k - alpha - 1) k^alpha
    start[1:] = k ** power * (np.expm1(power * np.log1p(-1.0 / k)) + power / k)
    return w, start


def _apply(values: np.ndarray, alpha: float, step: float, singular: Sequence[float] = ()) -> np.ndarray:
    size = values.size
    w, start = product_weights(alpha, size)
    out = np.zeros(size)
    out[1:] = convolve(values[1:], w, method="auto")[:size - 1] + start[1:] * values[0]
    out *= step ** alpha / gamma(alpha + 2)
    exponents = _singular_exponents(singular)
    if exponents:
        W = starting_weights(alpha, size, step, exponents)
        out += W @ values[:W.shape[1]]
    return out


def _singular_exponents(singular: Sequence[float]) -> List[float]:
    """Positive non-integer exponents, deduplicated. Integer powers are smooth and left to the base rule."""
    kept: List[float] = []
    for e in singular:
        e = float(e)
        if e > 0 and abs(e - round(e)) > 1e-9 and all(abs(e - k) > 1e-9 for k in kept):
            kept.append(e)
    return kept


def starting_weights(alpha: float, size: int, step: float, exponents: Sequence[float]) -> np.ndarray:
    """
    Correction weights on the first m = 2 + len(exponents) samples.

    Row k of W makes rule_k(g) + W[k] @ g[:m] exact for g in {1, x, x^e ...}.
    The product rule is already exact on 1 and x, so only the x^e columns of
    the residual are nonzero. Solved in grid units (step 1) and rescaled.
    """
    powers = [0.0, 1.0] + [float(e) for e in exponents]
    m = len(powers)
    if size < m:
        raise NumericalError(f"Starting weights need >= {m} samples, got {size}")
    t = np.arange(size, dtype=float)
    V = np.array([t[:m] ** p for p in powers])
    R = np.zeros((m, size))
    for i, p in enumerate(powers[2:], start=2):
        exact = gamma(p + 1) / gamma(p + alpha + 1) * t ** (p + alpha)
        R[i] = exact - _apply(t ** p, alpha, 1.0)
    return np.linalg.solve(V, R).T * step ** alpha


def frac_integral(g: Curve, alpha: Order, singular: Sequence[float] = ()) -> Curve:
    """
    J^alpha g on the same grid, exact when g is piecewise linear.
    alpha = 0 is the identity.

    singular lists exponents e with g ~ x^e near 0 (e.g. g itself a fractional
    integral of a smooth curve); starting weights make the rule exact on them.
    """
    _require_origin(g)
    a = _alpha(alpha)
    if a == 0:
        return g.with_values(g.values, label=f"J0[{g.label}]")
    return g.with_values(_apply(g.values, a, g.step, singular), label=f"J{a:g}[{g.label}]")


def abel_integral(g: Curve, alpha: Order) -> Curve:
    """Unnormalized Abel integral int_0^x (x - s)^(alpha - 1) g(s) ds = Gamma(alpha) J^alpha g."""
    a = _alpha(alpha)
    if a == 0:
        raise ConfigurationError("Abel integral needs alpha > 0")
    return frac_integral(g, a).scaled(gamma(a))


def frac_matrix(alpha: float, size: int, step: float) -> np.ndarray:
    """Dense lower-triangular matrix of the discrete J^alpha."""
    w, start = product_weights(alpha, size)
    K = np.zeros((size, size))
    rows, cols = np.tril_indices(size)
    inner = cols >= 1
    K[rows[inner], cols[inner]] = w[rows[inner] - cols[inner]]
    K[:, 0] = start
    return K * step ** alpha / gamma(alpha + 2)


def semigroup_defect(g: Curve, alpha: Order, beta: Order) -> float:
    """
    max |J^a J^b g - J^(a+b) g| / max |J^(a+b) g|.

    The larger order is applied first so the outer rule integrates the
    smoother curve. Near 0 that curve behaves like g(0) x^c + g'(0) x^(c+1),
    c the larger order, so the outer rule carries starting weights for both.
    """
    a, b = _alpha(alpha), _alpha(beta)
    if a == 0 or b == 0:
        return 0.0
    inner, outer = max(a, b), min(a, b)
    composed = frac_integral(frac_integral(g, inner), outer, singular=(inner, inner + 1)).values
    direct = _apply(g.values, a + b, g.step)
    scale = float(np.max(np.abs(direct)))
    diff = float(np.max(np.abs(composed - direct)))
    return diff / scale if scale > 0 else diff


def second_difference(size: int) -> np.ndarray:
    D = np.zeros((size - 2, size))
    idx = np.arange(size - 2)
    D[idx, idx] = 1.0
    D[idx, idx + 1] = -2.0
    D[idx, idx + 2] = 1.0
    return D


def tikhonov_solve(K: np.ndarray, y: np.ndarray, weight: float,
                   penalty: Optional[np.ndarray] = None) -> np.ndarray:
    """
    argmin |K x - y|^2 + weight * tau * |D x|^2 with D the second difference
    and tau = trace(K^T K) / trace(D^T D), so weight is scale-free.

    Raises:
        RegularizationError if the normal equations are singular
    """
    D = second_difference(K.shape[1]) if penalty is None else penalty
    KtK = K.T @ K
    DtD = D.T @ D
    tau = np.trace(KtK) / np.trace(DtD)
    normal = KtK + weight * tau * DtD
    if np.linalg.cond(normal) > CONDITION_LIMIT:
        raise RegularizationError(
            f"Normal equations are singular (weight {weight:g}); use a larger tikhonov_weight"
        )
    try:
        factor = cho_factor(normal, lower=True)
    except LinAlgError:
        raise RegularizationError(
            f"Normal equations are not positive definite (weight {weight:g}); use a larger tikhonov_weight"
        )
    return cho_solve(factor, K.T @ y)


def _savgol_derivative(values: np.ndarray, step: float, window: int, order: int, deriv: int = 1) -> np.ndarray:
    window = min(window, values.size if values.size % 2 else values.size - 1)
    if window <= order:
        raise NumericalError(f"Curve with {values.size} samples is too short for a smoothed derivative")
    return savgol_filter(values, window, order, deriv=deriv, delta=step, mode="interp")


def _volterra(A: Curve, n: int, weight: float) -> np.ndarray:
    K = frac_matrix(n / 2, A.size, A.step) * gamma(n / 2 + 1)
    return tikhonov_solve(K, A.values, weight)


def _integrate_then_differentiate(A: Curve, n: int) -> np.ndarray:
    k = math.ceil(n / 2)
    smoothed = frac_integral(A, k - n / 2).values / gamma(n / 2 + 1)
    for _ in range(k):
        smoothed = np.gradient(smoothed, A.step, edge_order=2)
    return smoothed


def _invert(A: Curve, n: int, cfg: InversionConfig, scheme: str, weight_scale: float = 1.0,
            window_pad: int = 0) -> np.ndarray:
    if scheme == "savgol":
        if n != 2:
            raise ConfigurationError("The savgol derivative scheme only inverts n = 2 data")
        return _savgol_derivative(A.values, A.step, cfg.savgol_window + window_pad, cfg.savgol_order)
    if scheme == "volterra":
        return _volterra(A, n, cfg.tikhonov_weight * weight_scale)
    if scheme == "abel":
        return _integrate_then_differentiate(A, n)
    raise ConfigurationError(f"Unknown derivative scheme {scheme!r}")


def recover_volume(A: Curve, n: int, cfg: InversionConfig = InversionConfig(), label: str = "volume") -> Curve:
    """
    Invert A(lambda) = (n/2) int_0^lambda (lambda - s)^(n/2 - 1) v(s) ds for v.

    err_est is the change under a perturbed regularization (4x weight, or a
    wider smoothing window), a proxy for the inversion noise.
    """
    _require_origin(A)
    scheme = cfg.scheme_for(n)
    flags = []
    drops = np.diff(A.values)
    tolerance = 1e-9 * max(float(np.max(np.abs(A.values))), 1e-300)
    if np.any(drops < -tolerance):
        flags.append("non-monotone-input")
        logger.warning(f"Input '{A.label}' decreases by up to {-float(drops.min()):.3g}; inverting anyway")
    if abs(A.values[0]) > tolerance:
        flags.append("nonzero-origin")

    v = _invert(A, n, cfg, scheme)
    alt = _invert(A, n, cfg, scheme, weight_scale=4.0, window_pad=2)
    if cfg.monotone:
        v = isotonic_regression(v, increasing=True)
        alt = isotonic_regression(alt, increasing=True)
    err = np.abs(v - alt)
    if A.err is not None and scheme == "savgol":
        err = err + np.abs(_savgol_derivative(A.err, A.step, cfg.savgol_window, cfg.savgol_order))
    meta = {"scheme": scheme}
    if flags:
        meta["flags"] = ";".join(flags)
    return Curve(A.grid_min, A.grid_max, v, label, err, {**A.meta, **meta})


def _derivative_curve(c: Curve, cfg: InversionConfig, label: str) -> Curve:
    d = _savgol_derivative(c.values, c.step, cfg.savgol_window, cfg.savgol_order)
    alt = _savgol_derivative(c.values, c.step, cfg.savgol_window + 2, cfg.savgol_order)
    err = np.abs(d - alt)
    if c.err is not None:
        err = err + np.abs(_savgol_derivative(c.err, c.step, cfg.savgol_window, cfg.savgol_order))
    return Curve(c.grid_min, c.grid_max, d, label, err, dict(c.meta))


def recover_surface_invariants(A: Curve, B: Curve, n: int,
                               cfg: InversionConfig = InversionConfig()) -> Tuple[Curve, Curve]:
    """
    I1 = v' with v recovered from A; I2 = W' with W recovered from B by the
    same kernel, since B(lambda) = int_0^lambda (lambda - s)^{n/2} I2(s) ds.
    """
    v = recover_volume(A, n, cfg, "volume")
    W = recover_volume(B, n, cfg, "W")
    return _derivative_curve(v, cfg, "I1"), _derivative_curve(W, cfg, "I2")
