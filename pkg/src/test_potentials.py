#!/usr/bin/env python3
"""
Tests for the test potentials and their quadrature oracles
"""

import math
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

# Add parent directory to path to import our modules
sys.path.append(str(Path(__file__).parent.parent))

from src.config import QuadratureParams
from src.errors import ConfigurationError, CoverageError, DomainError
from src.lib.artifacts import read_curve
from src.logger import get_logger
from src.potentials import (
    AnalyticPotential,
    RadialProfile,
    closed_form_surface_invariants,
    eval_potential,
    grad_potential,
    level_surface_invariants_oracle,
    phase_space_integral_oracle,
    pushforward_density,
    regular_values,
    sublevel_volume_oracle,
    write_oracle_curves,
)

logger = get_logger('test_potentials')


def test_harmonic_values_and_gradient():
    P = AnalyticPotential.harmonic(2)
    assert eval_potential(P, [0.3, 0.4]) == pytest.approx(0.25)
    assert np.allclose(grad_potential(P, [0.3, 0.4]), [0.6, 0.8])


def test_translation_moves_the_minimum():
    P = AnalyticPotential.harmonic(2, center=[0.2, 0.1])
    assert eval_potential(P, [0.2, 0.1]) == 0.0
    assert eval_potential(P, [0.5, 0.5]) == pytest.approx(0.09 + 0.16)


def test_points_outside_the_box_are_rejected():
    P = AnalyticPotential.harmonic(2)
    with pytest.raises(DomainError):
        eval_potential(P, [2.0, 0.0])
    with pytest.raises(DomainError):
        grad_potential(P, [0.0, 0.0, 0.0])


def test_power_profile_inverse_and_derivative():
    profile = RadialProfile.power_law(3, c=2.0, p=3.0, lambda0=1.0)
    r = np.linspace(0.05, profile.R0, 17)
    assert np.allclose(profile.inverse(profile(r)), r)
    assert np.allclose(profile.derivative(r), 6.0 * r ** 2)
    assert profile(profile.R0) == pytest.approx(1.0)


def test_extension_is_continuous_and_confining():
    profile = RadialProfile.power_law(2, 1.0, 4.0, 1.0)
    R0 = profile.R0
    assert profile.extended(R0 + 1e-9) == pytest.approx(profile.extended(R0 - 1e-9), abs=1e-7)
    assert profile.extended_derivative(R0 + 1e-9) == pytest.approx(profile.edge_slope, rel=1e-6)
    outer = np.linspace(R0, 5 * R0, 50)
    assert np.all(np.diff(profile.extended(outer)) > 0)


def test_quadratic_extension_reproduces_the_oscillator():
    """c r^2 continues as r^2 past R0"""
    profile = RadialProfile.power_law(2, 1.0, 2.0, 1.5)
    r = np.linspace(0.0, 3.0, 31)
    assert np.allclose(profile.extended(r), r * r)


def test_table_profile_interpolates_its_nodes():
    r = np.linspace(0, 1, 9)
    profile = RadialProfile.from_table(2, r, r ** 2)
    assert np.allclose(profile(r), r ** 2)
    assert profile.lambda0 == 1.0 and profile.R0 == 1.0
    P = AnalyticPotential.radial(profile)
    assert P.gradient_method == "central-difference"
    assert np.allclose(P.gradients(np.array([0.5, 0.0])), [1.0, 0.0], atol=1e-3)


def test_invalid_profiles():
    with pytest.raises(ConfigurationError):
        RadialProfile.from_table(2, [0.0, 0.5, 1.0], [0.0, 0.6, 0.5])
    with pytest.raises(ConfigurationError):
        RadialProfile.from_table(2, [0.1, 0.5, 1.0], [0.0, 0.5, 1.0])
    with pytest.raises(ConfigurationError):
        AnalyticPotential.anisotropic([1.0, -2.0])
    with pytest.raises(ConfigurationError):
        AnalyticPotential.perturbed(2, amplitude=1.2, mode=3)


def test_sublevel_volume_of_the_oscillator():
    P = AnalyticPotential.harmonic(2)
    result = sublevel_volume_oracle(P, 0.5)
    assert result.value == pytest.approx(math.pi * 0.5, rel=1e-3)
    assert result.err_est < 1e-2


def test_phase_space_integrals_of_the_oscillator():
    """int (1 - |x|^2)_+ dx = pi/2 and int 4|x|^2 (1 - |x|^2)_+ dx = 2 pi / 3"""
    P = AnalyticPotential.harmonic(2)
    A = phase_space_integral_oracle(P, 1.0)
    B = phase_space_integral_oracle(P, 1.0, "grad-squared")
    assert A.value == pytest.approx(math.pi / 2, rel=1e-3)
    assert B.value == pytest.approx(2 * math.pi / 3, rel=1e-3)
    assert A.phase_space_value == pytest.approx(math.pi ** 2 / 2, rel=1e-3)


def test_coverage_error_when_the_box_is_too_small():
    P = AnalyticPotential.harmonic(2, half_width=0.5)
    with pytest.raises(CoverageError):
        sublevel_volume_oracle(P, 1.0)
    with pytest.raises(CoverageError):
        level_surface_invariants_oracle(P, 0.5)


def test_contour_invariants_of_the_oscillator():
    """I1 = pi and I2 = 4 pi s for |x|^2 in the plane"""
    P = AnalyticPotential.harmonic(2)
    result = level_surface_invariants_oracle(P, 0.5)
    assert result.method == "contour"
    assert result.I1 == pytest.approx(math.pi, rel=1e-3)
    assert result.I2 == pytest.approx(2 * math.pi, rel=1e-3)
    assert result.area == pytest.approx(2 * math.pi * math.sqrt(0.5), rel=1e-3)


def test_ray_invariants_in_three_dimensions():
    """I1 = 2 pi sqrt(s) and I2 = 8 pi s^1.5 for |x|^2 in R^3"""
    P = AnalyticPotential.harmonic(3)
    result = level_surface_invariants_oracle(P, 0.25)
    assert result.method == "ray"
    assert result.I1 == pytest.approx(math.pi, rel=1e-5)
    assert result.I2 == pytest.approx(math.pi, rel=1e-5)


def test_closed_form_agrees_with_the_contour_oracle():
    P = AnalyticPotential.anisotropic([1.0, 4.0])
    volume, I1, I2 = closed_form_surface_invariants(P, 0.5)
    assert volume == pytest.approx(math.pi * 0.25)
    result = level_surface_invariants_oracle(P, 0.5)
    assert result.I1 == pytest.approx(I1, rel=1e-3)
    assert result.I2 == pytest.approx(I2, rel=1e-3)


@settings(max_examples=25, deadline=None)
@given(st.floats(min_value=0.05, max_value=0.95))
def test_closed_form_radial_matches_power_law(s):
    profile = RadialProfile.power_law(3, 1.0, 2.0, 1.0)
    P = AnalyticPotential.radial(profile)
    volume, I1, I2 = closed_form_surface_invariants(P, s)
    assert volume == pytest.approx(4 / 3 * math.pi * s ** 1.5)
    assert I1 == pytest.approx(2 * math.pi * s ** 0.5)
    assert I2 == pytest.approx(8 * math.pi * s ** 1.5)


def test_regular_values_drop_the_plateau():
    P = AnalyticPotential.plateau(2, 0.5, 0.7)
    kept = regular_values(P, [0.1, 0.25, 0.6], QuadratureParams(contour_points=401))
    assert 0.1 in kept and 0.6 in kept
    assert 0.25 not in kept


def test_pushforward_flags_the_plateau_atom():
    P = AnalyticPotential.plateau(2, 0.5, 0.7)
    density = pushforward_density(P, bins=200)
    assert len(density.atoms) == 1
    assert abs(density.atoms[0] - 0.25) <= 0.005
    logger.info(f"✓ Atom found at s = {density.atoms[0]:.4f}")


def test_pushforward_of_the_oscillator_is_flat():
    """V_* dx = pi ds on (0, 1) for |x|^2 in the plane"""
    P = AnalyticPotential.harmonic(2)
    density = pushforward_density(P, bins=50)
    assert density.atoms == ()
    assert density.total_mass == pytest.approx(math.pi, rel=1e-3)
    assert np.allclose(density.density.values[5:-5], math.pi, rtol=0.05)


def test_write_oracle_curves(tmp_path):
    P = AnalyticPotential.harmonic(2)
    quad = QuadratureParams(cells_2d=200, refine=2, contour_points=201)
    write_oracle_curves(P, tmp_path, 0.9, 11, 11, quad)
    for name in ("A", "B", "volume", "I1", "I2"):
        assert (tmp_path / f"{name}.csv").exists()
    volume = read_curve(tmp_path / "volume.csv")
    I1 = read_curve(tmp_path / "I1.csv")
    assert volume.grid_min == 0.0 and volume.values[0] == 0.0
    assert I1.grid_min == pytest.approx(0.09)
    assert np.allclose(I1.values, math.pi, rtol=1e-2)
