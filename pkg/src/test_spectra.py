#!/usr/bin/env python3
"""
Tests for the forward eigenvalue solvers and spectrum files
"""

import math
import sys
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path to import our modules
sys.path.append(str(Path(__file__).parent.parent))

from src.config import SolverParams
from src.errors import ArtifactError, ConfigurationError, NumericalError
from src.logger import get_logger
from src.potentials import AnalyticPotential, RadialProfile
from src.spectra import (
    Spectrum,
    build_spectrum,
    count_below,
    exact_harmonic_spectrum,
    merge_levels,
    perturb_spectrum,
    radial_fd_spectrum,
    read_spectra,
    spherical_harmonic_dim,
    weighted_energies,
    write_spectra,
)

logger = get_logger('test_spectra')


@pytest.mark.parametrize("ell,n,expected", [
    (0, 2, 1), (3, 2, 2), (0, 3, 1), (1, 3, 3), (2, 3, 5), (2, 4, 9),
])
def test_spherical_harmonic_dim(ell, n, expected):
    assert spherical_harmonic_dim(ell, n) == expected


def test_harmonic_counts_in_the_plane():
    """E_m = 0.01 (2m + 2) with multiplicity m + 1"""
    spec = exact_harmonic_spectrum(2, 0.01, 1.05)
    assert spec.energies[0] == pytest.approx(0.02)
    assert list(spec.multiplicities[:4]) == [1, 2, 3, 4]
    assert count_below(spec, 1.0) == 1225
    assert count_below(spec, 1.0 + 1e-9) == 1275
    logger.info(f"✓ N(1) = {count_below(spec, 1.0)}")


def test_count_below_rejects_lambda_past_the_range():
    spec = exact_harmonic_spectrum(2, 0.1, 1.0)
    with pytest.raises(ConfigurationError):
        count_below(spec, 1.5)


def test_spectrum_validation():
    with pytest.raises(NumericalError):
        Spectrum(0.1, 2, 1.0, [0.4, 0.2], [1, 1], "exact-harmonic")
    with pytest.raises(NumericalError):
        Spectrum(0.1, 2, 1.0, [0.2, 1.2], [1, 1], "exact-harmonic")
    with pytest.raises(NumericalError):
        Spectrum(0.1, 2, 1.0, [0.2], [0], "exact-harmonic")
    with pytest.raises(NumericalError):
        Spectrum(0.1, 2, 1.0, [0.2], [1], "guess")


def test_merge_levels_combines_degenerate_energies():
    energies, mults = merge_levels([(0.5, 1), (0.2, 2), (0.5 + 1e-12, 3)], 1e-9)
    assert np.allclose(energies, [0.2, 0.5])
    assert list(mults) == [2, 4]


def _fd_error(grid_points):
    # c r^2 with lambda0 = 1.5 extends as r^2, so the whole spectrum is the oscillator's
    profile = RadialProfile.power_law(2, 1.0, 2.0, 1.5)
    params = SolverParams(method="finite-difference", r_max=3.0, grid_points=grid_points)
    fd = weighted_energies(radial_fd_spectrum(profile, 0.1, 1.1, params))
    exact = weighted_energies(exact_harmonic_spectrum(2, 0.1, 1.0))
    assert fd.size == exact.size == 15
    return float(np.max(np.abs(fd - exact)))


def test_finite_differences_match_the_oscillator():
    coarse = _fd_error(1000)
    fine = _fd_error(4000)
    assert fine < 1e-4
    assert coarse / fine >= 14
    logger.info(f"✓ FD error {coarse:.3g} -> {fine:.3g}")


def test_angular_cutoff_limit():
    profile = RadialProfile.power_law(2, 1.0, 2.0, 1.0)
    params = SolverParams(method="finite-difference", grid_points=200, l_max_limit=1)
    with pytest.raises(ConfigurationError):
        radial_fd_spectrum(profile, 0.01, 0.9, params)


def test_fd_spectrum_rejects_bad_inputs():
    profile = RadialProfile.power_law(2, 1.0, 2.0, 1.0)
    with pytest.raises(ConfigurationError):
        radial_fd_spectrum(profile, 0.0, 0.9)
    with pytest.raises(ConfigurationError):
        radial_fd_spectrum(profile, 0.1, 1.2)
    with pytest.raises(ConfigurationError):
        radial_fd_spectrum(profile, 0.1, 0.9, SolverParams(r_max=0.5))


def test_build_spectrum_dispatch():
    P = AnalyticPotential.harmonic(2)
    spec = build_spectrum(P, 0.1, 1.0)
    assert spec.provenance == "exact-harmonic"

    with pytest.raises(ConfigurationError):
        build_spectrum(AnalyticPotential.anisotropic([1.0, 4.0]), 0.1, 0.9)
    with pytest.raises(ConfigurationError):
        build_spectrum(AnalyticPotential.radial(RadialProfile.power_law(2, 1.0, 4.0, 1.0)), 0.1, 0.9,
                       SolverParams(method="exact"))


def test_perturbation_alternates_and_drops_out_of_range_levels():
    spec = exact_harmonic_spectrum(2, 0.1, 1.0)
    shifted = perturb_spectrum(spec)
    assert len(shifted) == 4
    assert np.allclose(shifted.energies - spec.energies[:4], [1e-3, -1e-3, 1e-3, -1e-3])
    assert "perturbation" in shifted.solver


def test_spectra_files_read_back(tmp_path):
    spectra = [exact_harmonic_spectrum(3, h, 1.0) for h in (0.1, 0.05)]
    manifest = write_spectra(spectra, tmp_path, {"family": "harmonic"})
    assert manifest.name == "manifest.json"

    loaded = read_spectra(tmp_path)
    assert [s.h for s in loaded] == [0.1, 0.05]
    for a, b in zip(spectra, loaded):
        assert np.array_equal(a.energies, b.energies)
        assert np.array_equal(a.multiplicities, b.multiplicities)
        assert b.n == 3


def test_missing_manifest(tmp_path):
    with pytest.raises(ArtifactError):
        read_spectra(tmp_path)


def test_weighted_energies_sum_to_the_trace():
    spec = exact_harmonic_spectrum(2, 0.1, 1.0)
    assert weighted_energies(spec).sum() == pytest.approx(sum(0.1 * (2 * m + 2) * (m + 1) for m in range(5)))
    assert math.isclose(weighted_energies(spec).size, spec.total_count)
