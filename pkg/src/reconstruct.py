"""
Reconstruct the radial profile from the sublevel-volume curve and certify radiality.

On a radial potential v(s) = omega_n rho(s)^n with rho = R^-1, so R follows
from v by a monotone inversion. The isoperimetric defect
D = I1 I2 - S_iso(v)^2 is >= 0 and vanishes exactly when every level set is a
sphere of the matching volume; F = I2 / I1 is then |grad V|^2 on {V = s}.
"""

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.interpolate import PchipInterpolator
from sklearn.isotonic import isotonic_regression

from src.config import ReportConfig
from src.errors import AssemblyError, DivisionError, InversionError
from src.lib.curves import Curve, require_same_grid
from src.logger import get_logger
from src.potentials import RadialProfile
from src.transforms.geometry import ball_radius, isoperimetric_area

logger = get_logger('reconstruct')

MONOTONE_VIOLATION_LIMIT = 0.05
DEFECT_NOISE_FACTOR = 3.0
DEFECT_NOISE_FLOOR = 1e-3


def radial_profile_from_volume(v: Curve, n: int, violation_limit: float = MONOTONE_VIOLATION_LIMIT,
                               r_points: Optional[int] = None) -> RadialProfile:
    """
    R on a uniform r-grid over [0, rho(s_max)] from rho(s) = (v(s) / omega_n)^(1/n).

    Samples with v = 0 carry no information and are skipped; the table starts
    at (0, 0) and continues from the first positive volume.

    Raises:
        InversionError if v decreases by more than violation_limit of its range
    """
    values = np.asarray(v.values, dtype=float)
    span = float(values.max() - values.min())
    drops = np.maximum.accumulate(values) - values
    if span <= 0:
        raise InversionError(f"Volume curve '{v.label}' is constant")
    if drops.max() > violation_limit * span:
        raise InversionError(
            f"Volume curve '{v.label}' decreases by {drops.max() / span:.1%} of its range "
            f"(limit {violation_limit:.0%})"
        )
    if drops.max() > 0:
        values = isotonic_regression(values, increasing=True)

    s = v.grid
    rho = ball_radius(np.clip(values, 0.0, None), n)
    positive = np.flatnonzero((rho > 0) & (s > 0))
    if positive.size < 2:
        raise InversionError(f"Volume curve '{v.label}' has fewer than 2 positive samples")
    keep = [positive[0]]
    for i in positive[1:]:
        if rho[i] > rho[keep[-1]]:
            keep.append(i)
    rho_k = np.concatenate([[0.0], rho[keep]])
    s_k = np.concatenate([[0.0], s[keep]])

    points = r_points or v.size
    r = np.linspace(0.0, float(rho_k[-1]), points)
    R = PchipInterpolator(rho_k, s_k)(r)
    R[0] = 0.0
    return RadialProfile.from_table(n, r, R)


def isoperimetric_defect(I1: Curve, I2: Curve, v: Curve, n: int) -> Curve:
    """D(s) = I1(s) I2(s) - S_iso(v(s))^2, S_iso the area of the ball of volume v."""
    require_same_grid(I1, I2, v)
    area = isoperimetric_area(v.values, n)
    D = I1.values * I2.values - area ** 2
    err = None
    if I1.err is not None or I2.err is not None or v.err is not None:
        e1 = I1.err if I1.err is not None else 0.0
        e2 = I2.err if I2.err is not None else 0.0
        ev = v.err if v.err is not None else 0.0
        dS = (n - 1) / n * np.divide(area, v.values, out=np.zeros_like(area), where=v.values > 0) * ev
        err = np.abs(I2.values) * e1 + np.abs(I1.values) * e2 + 2 * area * dS
    return I1.with_values(D, label="defect", err=err)


def gradient_modulus_profile(I1: Curve, I2: Curve) -> Curve:
    """
    F(s) = I2(s) / I1(s). Equals |grad V|^2 on {V = s} only when the defect vanishes.

    Raises:
        DivisionError if I1 <= 0 at a grid point
    """
    require_same_grid(I1, I2)
    bad = np.flatnonzero(I1.values <= 0)
    if bad.size:
        raise DivisionError(f"I1 <= 0 at s = {I1.grid[bad[0]]:g} ({bad.size} grid points)")
    F = I2.values / I1.values
    err = None
    if I1.err is not None and I2.err is not None:
        err = np.abs(F) * (I1.err / I1.values + I2.err / np.maximum(np.abs(I2.values), 1e-300))
    return I1.with_values(F, label="F", err=err, caveat="|grad V|^2 = F(V) holds only where the defect vanishes")


def profile_gradient_squared(profile: RadialProfile, s) -> np.ndarray:
    """(R'(rho(s)))^2, the radial prediction for F(s)."""
    return np.asarray(profile.derivative(profile.inverse(s)), dtype=float) ** 2


@dataclass(frozen=True)
class RadialityVerdict:
    radial: bool
    max_relative_defect: float
    noise: float
    threshold: float
    s_range: Tuple[float, float]

    def to_json(self) -> Dict[str, object]:
        return {
            "radial": self.radial,
            "max_relative_defect": self.max_relative_defect,
            "noise": self.noise,
            "threshold": self.threshold,
            "s_range": list(self.s_range),
        }


def radiality_verdict(defect: Curve, I1: Curve, I2: Curve, noise: Optional[float] = None,
                      factor: float = DEFECT_NOISE_FACTOR, s_range: Tuple[float, float] = (0.1, 0.9),
                      noise_floor: float = DEFECT_NOISE_FLOOR) -> RadialityVerdict:
    """
    Radial iff max D / (I1 I2) over the central s-range stays below factor x noise.
    noise defaults to the propagated relative error of D, floored at noise_floor.
    """
    require_same_grid(defect, I1, I2)
    s = defect.grid
    lo = defect.grid_min + s_range[0] * (defect.grid_max - defect.grid_min)
    hi = defect.grid_min + s_range[1] * (defect.grid_max - defect.grid_min)
    mask = (s >= lo) & (s <= hi)
    scale = np.abs(I1.values * I2.values)[mask]
    relative = defect.values[mask] / np.maximum(scale, 1e-300)
    if noise is None:
        noise = 0.0
        if defect.err is not None:
            noise = float(np.max(defect.err[mask] / np.maximum(scale, 1e-300)))
    noise = max(noise, noise_floor)
    worst = float(np.max(np.abs(relative)))
    verdict = RadialityVerdict(worst < factor * noise, worst, noise, factor * noise, (float(lo), float(hi)))
    logger.info(f"Radiality verdict: {'radial' if verdict.radial else 'not radial'} "
                f"(max relative defect {worst:.3g}, threshold {verdict.threshold:.3g})")
    return verdict


@dataclass(frozen=True, eq=False)
class ReconstructionInputs:
    """Stage outputs the report is assembled from."""
    n: int
    volume: Optional[Curve] = None
    I1: Optional[Curve] = None
    I2: Optional[Curve] = None
    provenance: Dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class ReconstructionReport:
    profile: RadialProfile
    defect: Curve
    F: Curve
    verdict: RadialityVerdict
    metrics: Optional[Dict[str, float]]
    consistency: Dict[str, float]
    tolerances: Dict[str, object]
    provenance: Dict[str, str]

    def to_json(self) -> Dict[str, object]:
        return {
            "profile": np.column_stack([self.profile.r_table, self.profile.R_table]).tolist(),
            "defect": np.column_stack([self.defect.grid, self.defect.values]).tolist(),
            "F": np.column_stack([self.F.grid, self.F.values]).tolist(),
            "metrics": self.metrics,
            "consistency": self.consistency,
            "tolerances": self.tolerances,
            "provenance": self.provenance,
            "verdict": self.verdict.to_json(),
        }


def profile_error(recovered: RadialProfile, reference: RadialProfile,
                  r_range: Tuple[float, float] = (0.1, 0.9), points: int = 401) -> Dict[str, float]:
    """Max and RMS relative error of R on r in r_range * rho(s_max)."""
    r = np.linspace(r_range[0] * recovered.R0, r_range[1] * recovered.R0, points)
    truth = np.asarray(reference.extended(r), dtype=float)
    rel = np.abs(np.asarray(recovered(r)) - truth) / truth
    return {
        "max_relative_error": float(rel.max()),
        "rms_relative_error": float(np.sqrt(np.mean(rel ** 2))),
        "r_min": float(r[0]),
        "r_max": float(r[-1]),
    }


def resample(c: Curve, target: Curve) -> Curve:
    """c interpolated onto the grid of target."""
    err = None if c.err is None else np.interp(target.grid, c.grid, c.err)
    return target.with_values(c.at(target.grid), label=c.label, err=err)


def defect_diagnosis(volume: Curve, I1: Curve, I2: Curve, n: int,
                     metric_range: Tuple[float, float] = (0.1, 0.9),
                     factor: float = DEFECT_NOISE_FACTOR) -> Tuple[Curve, Curve, Curve, RadialityVerdict]:
    """
    D, F and the radiality verdict on the interior levels metric_range of the
    I1 grid; both ends are ill-conditioned.

    Returns:
        (defect, F, volume on the same grid, verdict)
    """
    lo, hi = metric_range
    I1, I2 = I1.window(lo, hi), I2.window(lo, hi)
    volume = resample(volume, I1)
    defect = isoperimetric_defect(I1, I2, volume, n)
    F = gradient_modulus_profile(I1, I2)
    verdict = radiality_verdict(defect, I1, I2, factor=factor, s_range=(0.0, 1.0))
    return defect, F, volume, verdict


def build_report(inputs: ReconstructionInputs, reference: Optional[RadialProfile] = None,
                 cfg: ReportConfig = ReportConfig(), defect_factor: float = DEFECT_NOISE_FACTOR) -> ReconstructionReport:
    """
    Assemble profile, D, F, verdict and (with a reference) error metrics.

    Raises:
        AssemblyError if a stage output is missing
    """
    missing = [name for name in ("volume", "I1", "I2") if getattr(inputs, name) is None]
    if missing:
        raise AssemblyError(f"Report needs stage outputs {', '.join(missing)}")
    n = inputs.n
    profile = radial_profile_from_volume(inputs.volume, n, cfg.monotone_violation_limit)
    defect, F, _, verdict = defect_diagnosis(inputs.volume, inputs.I1, inputs.I2, n, cfg.metric_range, defect_factor)

    predicted = profile_gradient_squared(profile, F.grid)
    consistency = {
        "F_max_relative_difference": float(np.max(np.abs(F.values - predicted) / np.maximum(predicted, 1e-300))),
    }

    metrics = profile_error(profile, reference, cfg.metric_range) if reference is not None else None
    if metrics is not None:
        logger.info(f"Profile error on r in [{metrics['r_min']:.3g}, {metrics['r_max']:.3g}]: "
                    f"max {metrics['max_relative_error']:.3%}, rms {metrics['rms_relative_error']:.3%}")
    tolerances = {
        "metric_range": list(cfg.metric_range),
        "monotone_violation_limit": cfg.monotone_violation_limit,
        "defect_noise_factor": defect_factor,
        "defect_noise_floor": DEFECT_NOISE_FLOOR,
    }
    return ReconstructionReport(profile, defect, F, verdict, metrics, consistency, tolerances, dict(inputs.provenance))
