"""
Forward problem: eigenvalues of -h^2 Laplacian + V below lambda_max for radial V.

The harmonic oscillator has a closed-form spectrum. Any other radial profile is
separated into angular momenta l = 0, 1, ... and each reduced radial problem is
discretized as a symmetric tridiagonal matrix whose eigenvalues below
lambda_max are found by Sturm-sequence bisection.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, eigvalsh_tridiagonal

from src.config import Config, SolverParams
from src.errors import ArtifactError, ConfigurationError, EigensolverError, NumericalError
from src.lib.artifacts import column, read_csv, read_json, write_csv, write_json
from src.logger import get_logger
from src.potentials import AnalyticPotential, RadialProfile

logger = get_logger('spectra')

PROVENANCES = ("exact-harmonic", "finite-difference")
SPECTRUM_HEADER = ("h", "n", "energy", "multiplicity")
MERGE_TOLERANCE = 1e-9


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Distinct energies in (0, lambda_max] with their multiplicities."""
    h: float
    n: int
    lambda_max: float
    energies: np.ndarray
    multiplicities: np.ndarray
    provenance: str
    solver: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        energies = np.array(self.energies, dtype=float).reshape(-1)
        mults = np.array(self.multiplicities, dtype=np.int64).reshape(-1)
        if energies.shape != mults.shape:
            raise NumericalError("Spectrum energies and multiplicities differ in length")
        if self.h <= 0:
            raise NumericalError(f"Spectrum needs h > 0, got {self.h}")
        if self.provenance not in PROVENANCES:
            raise NumericalError(f"Unknown spectrum provenance {self.provenance!r}")
        if energies.size:
            if np.any(np.diff(energies) <= 0):
                raise NumericalError("Spectrum energies must be strictly increasing")
            if energies[0] <= 0 or energies[-1] > self.lambda_max * (1 + 1e-12):
                raise NumericalError(f"Spectrum energies must lie in (0, {self.lambda_max:g}]")
            if np.any(mults < 1):
                raise NumericalError("Spectrum multiplicities must be >= 1")
        energies.setflags(write=False)
        mults.setflags(write=False)
        object.__setattr__(self, "energies", energies)
        object.__setattr__(self, "multiplicities", mults)

    def __len__(self):
        return int(self.energies.size)

    @property
    def total_count(self) -> int:
        return int(self.multiplicities.sum())

    def scaled_multiplicities(self, factor: int) -> "Spectrum":
        return Spectrum(self.h, self.n, self.lambda_max, self.energies,
                        self.multiplicities * factor, self.provenance, dict(self.solver))


def spherical_harmonic_dim(ell: int, n: int) -> int:
    """Dimension of the degree-l spherical harmonics on S^{n-1}."""
    if ell < 0 or n < 2:
        raise ValueError(f"Need l >= 0 and n >= 2, got l={ell}, n={n}")
    if ell == 0:
        return 1
    if n == 2:
        return 2
    return math.comb(ell + n - 1, n - 1) - math.comb(ell + n - 3, n - 1)


def exact_harmonic_spectrum(n: int, h: float, lambda_max: float) -> Spectrum:
    """E_m = h(2m + n) with multiplicity binomial(m + n - 1, n - 1)."""
    if h <= 0:
        raise ConfigurationError(f"h must be > 0, got {h}")
    energies, mults = [], []
    m = 0
    while True:
        energy = h * (2 * m + n)
        if energy > lambda_max * (1 + 1e-12):
            break
        energies.append(energy)
        mults.append(math.comb(m + n - 1, n - 1))
        m += 1
    return Spectrum(h, n, lambda_max, energies, mults, "exact-harmonic")


def default_r_max(profile: RadialProfile) -> float:
    """Three times R0, widened until the extension exceeds 4 lambda0."""
    r_max = 3 * profile.R0
    while float(profile.extended(r_max)) < 4 * profile.lambda0:
        r_max *= 1.5
    return r_max


class RadialOperator:
    """
    -h^2 Laplacian + R_ext on the l-th spherical harmonic sector, in flux form on
    the offset grid r_j = (j + 1/2) dr, symmetrized by r_j^{(n-1)/2}.

    Zero flux weight at r = 0 and a zero Dirichlet ghost value at r_max + dr/2.
    """

    def __init__(self, profile: RadialProfile, h: float, r_max: float, grid_points: int):
        n = profile.n
        self.n = n
        self.h = h
        self.dr = r_max / grid_points
        self.r = (np.arange(grid_points) + 0.5) * self.dr
        faces = np.arange(grid_points + 1) * self.dr
        flux = faces ** (n - 1)
        weight = self.r ** (n - 1)
        scale = h * h / (self.dr * self.dr)
        self.kinetic = scale * (flux[1:] + flux[:-1]) / weight
        self.coupling = -scale * flux[1:-1] / np.sqrt(weight[:-1] * weight[1:])
        self.potential = profile.extended(self.r)

    def centrifugal(self, ell: int) -> np.ndarray:
        return self.h * self.h * ell * (ell + self.n - 2) / self.r ** 2

    def effective_minimum(self, ell: int) -> float:
        """min over the grid of R_ext + h^2 (nu^2 - 1/4) / r^2, nu = l + (n - 2)/2."""
        nu = ell + (self.n - 2) / 2
        return float(np.min(self.potential + self.h * self.h * (nu * nu - 0.25) / self.r ** 2))

    def eigenvalues(self, ell: int, lambda_max: float, tolerance: float) -> np.ndarray:
        diagonal = self.kinetic + self.potential + self.centrifugal(ell)
        off = np.abs(self.coupling)
        radius = np.concatenate([[0.0], off]) + np.concatenate([off, [0.0]])
        lower = float(np.min(diagonal - radius)) - 1.0
        if lower >= lambda_max:
            return np.empty(0)
        try:
            return eigvalsh_tridiagonal(
                diagonal, self.coupling, select="v", select_range=(lower, lambda_max),
                lapack_driver="stebz", tol=tolerance,
            )
        except (LinAlgError, ValueError) as e:
            raise EigensolverError(f"Tridiagonal eigensolver failed: {e}", ell=ell, h=self.h)


def angular_cutoff(operator: RadialOperator, lambda_max: float, limit: int) -> int:
    """First l whose effective potential stays above lambda_max."""
    for ell in range(limit + 1):
        if operator.effective_minimum(ell) > lambda_max:
            return ell
    raise ConfigurationError(
        f"Centrifugal barrier never exceeds lambda_max={lambda_max:g} up to l={limit} "
        f"(h={operator.h:g}); raise solver.l_max_limit"
    )


def merge_levels(levels: Sequence[Tuple[float, int]], tolerance: float) -> Tuple[np.ndarray, np.ndarray]:
    """Sort (energy, multiplicity) pairs and merge energies closer than tolerance."""
    ordered = sorted(levels)
    energies: List[float] = []
    mults: List[int] = []
    anchor = None
    for energy, mult in ordered:
        if anchor is not None and energy - anchor <= tolerance:
            total = mults[-1] + mult
            energies[-1] = (energies[-1] * mults[-1] + energy * mult) / total
            mults[-1] = total
            continue
        anchor = energy
        energies.append(energy)
        mults.append(mult)
    return np.array(energies), np.array(mults, dtype=np.int64)


def radial_fd_spectrum(profile: RadialProfile, h: float, lambda_max: float,
                       params: SolverParams = SolverParams()) -> Spectrum:
    """
    Eigenvalues <= lambda_max of -h^2 Laplacian + R_ext(|x|), with multiplicity
    spherical_harmonic_dim(l, n) per angular momentum.

    Raises:
        ConfigurationError if the l cutoff exceeds params.l_max_limit
        EigensolverError (with l and h) if bisection fails
    """
    if h <= 0:
        raise ConfigurationError(f"h must be > 0, got {h}")
    if lambda_max > profile.lambda0 * (1 + 1e-12):
        raise ConfigurationError(f"lambda_max {lambda_max:g} exceeds lambda0 {profile.lambda0:g}")
    r_max = params.r_max if params.r_max is not None else default_r_max(profile)
    if r_max <= profile.R0:
        raise ConfigurationError(f"solver.r_max {r_max:g} must exceed R0 {profile.R0:g}")
    if params.grid_points < 100:
        raise ConfigurationError(f"solver.grid_points must be >= 100, got {params.grid_points}")

    operator = RadialOperator(profile, h, r_max, params.grid_points)
    l_cut = angular_cutoff(operator, lambda_max, params.l_max_limit)
    logger.info(f"FD spectrum h={h:g}: {params.grid_points} points, r_max={r_max:g}, l < {l_cut}")

    def solve(ell):
        return ell, operator.eigenvalues(ell, lambda_max, params.tolerance)

    with ThreadPoolExecutor(max_workers=Config.WORKERS) as pool:
        per_ell = list(pool.map(solve, range(l_cut)))

    levels = [
        (float(energy), spherical_harmonic_dim(ell, profile.n))
        for ell, values in per_ell
        for energy in values
        if 0 < energy <= lambda_max
    ]
    energies, mults = merge_levels(levels, MERGE_TOLERANCE * lambda_max)
    solver = {"grid_points": params.grid_points, "r_max": r_max, "l_max": l_cut - 1,
              "tolerance": params.tolerance}
    return Spectrum(h, profile.n, lambda_max, energies, mults, "finite-difference", solver)


def count_below(spec: Spectrum, lam: float) -> int:
    """Sum of multiplicities over energies strictly below lam."""
    if lam > spec.lambda_max * (1 + 1e-12):
        raise ConfigurationError(f"lambda {lam:g} exceeds the spectrum range {spec.lambda_max:g}")
    return int(spec.multiplicities[spec.energies < lam].sum())


def weighted_energies(spec: Spectrum) -> np.ndarray:
    """Every eigenvalue repeated by its multiplicity, ascending."""
    return np.repeat(spec.energies, spec.multiplicities)


def perturb_spectrum(spec: Spectrum, power: float = 3.0, amplitude: float = 1.0) -> Spectrum:
    """
    Shift the k-th distinct energy by (-1)^k * amplitude * h^power.
    Energies pushed outside (0, lambda_max] are dropped.
    """
    signs = np.where(np.arange(len(spec)) % 2 == 0, 1.0, -1.0)
    shifted = spec.energies + signs * amplitude * spec.h ** power
    keep = (shifted > 0) & (shifted <= spec.lambda_max)
    if np.any(np.diff(shifted[keep]) <= 0):
        raise NumericalError(f"Perturbation h^{power:g} reorders the spectrum at h={spec.h:g}")
    solver = dict(spec.solver)
    solver["perturbation"] = f"alternating {amplitude:g}*h^{power:g}"
    return Spectrum(spec.h, spec.n, spec.lambda_max, shifted[keep], spec.multiplicities[keep],
                    spec.provenance, solver)


def build_spectrum(P: AnalyticPotential, h: float, lambda_max: float,
                   params: SolverParams = SolverParams()) -> Spectrum:
    """Exact spectrum for the harmonic family, finite differences for radial profiles."""
    method = params.method
    if method == "auto":
        method = "exact" if P.family == "harmonic" else "finite-difference"
    if method == "exact":
        if P.family != "harmonic":
            raise ConfigurationError(f"Exact spectrum only exists for the harmonic family, not {P.family!r}")
        return exact_harmonic_spectrum(P.n, h, lambda_max)
    if P.family == "harmonic":
        profile = RadialProfile.power_law(P.n, 1.0, 2.0, P.lambda0)
    elif P.family == "radial":
        profile = P.profile
    else:
        raise ConfigurationError(f"No radial forward solver for the {P.family!r} family")
    return radial_fd_spectrum(profile, h, lambda_max, params)


def write_spectra(spectra: Sequence[Spectrum], out_dir: Path,
                  extra: Optional[Dict[str, object]] = None) -> Path:
    """
    One CSV per h (header h,n,energy,multiplicity) plus manifest.json.

    Returns:
        path of the manifest
    """
    out_dir = Path(out_dir)
    files = []
    for i, spec in enumerate(spectra):
        name = f"spectrum_h{i}.csv"
        rows = ((spec.h, spec.n, e, int(m)) for e, m in zip(spec.energies, spec.multiplicities))
        write_csv(out_dir / name, SPECTRUM_HEADER, rows)
        files.append({"file": name, "h": spec.h, "entries": len(spec), "count": spec.total_count,
                      "lambda_max": spec.lambda_max, "provenance": spec.provenance,
                      "solver": spec.solver})
    manifest = {"n": spectra[0].n if spectra else None, "files": files}
    manifest.update(extra or {})
    return write_json(out_dir / "manifest.json", manifest)


def read_spectra(spectra_dir: Path) -> List[Spectrum]:
    """Spectra listed in <spectra_dir>/manifest.json, in manifest order."""
    spectra_dir = Path(spectra_dir)
    manifest = read_json(spectra_dir / "manifest.json")
    entries = manifest.get("files")
    if not entries:
        raise ArtifactError(f"Manifest in {spectra_dir} lists no spectrum files")
    spectra = []
    for entry in entries:
        path = spectra_dir / entry["file"]
        rows = read_csv(path)
        energies = column(rows, "energy", path) if rows else np.empty(0)
        mults = column(rows, "multiplicity", path).astype(np.int64) if rows else np.empty(0, dtype=np.int64)
        try:
            spectra.append(Spectrum(
                h=float(entry["h"]), n=int(manifest["n"]), lambda_max=float(entry["lambda_max"]),
                energies=energies, multiplicities=mults, provenance=entry["provenance"],
                solver=entry.get("solver") or {},
            ))
        except (KeyError, NumericalError) as e:
            raise ArtifactError(f"Malformed spectrum entry {entry.get('file')}: {e}")
    return spectra
