#!/usr/bin/env python3
"""
Whole-pipeline scenarios on the planar oscillator and its relatives:
- profile recovery from exact spectra and from oracle curves
- stability under O(h^3) spectral noise
- defect and flowline verdicts on radial and non-radial potentials
- translation invariance
"""

import math
import sys
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path to import our modules
sys.path.append(str(Path(__file__).parent.parent))

from src.abel import recover_surface_invariants, recover_volume
from src.config import FlowlineConfig, QuadratureParams
from src.flowlines import flowline_certificate
from src.logger import get_logger
from src.potentials import AnalyticPotential, RadialProfile, surface_invariant_curves, volume_curve
from src.reconstruct import ReconstructionInputs, build_report, defect_diagnosis
from src.spectra import build_spectrum, exact_harmonic_spectrum, perturb_spectrum
from src.traces import extract_invariants, lambda_grid

logger = get_logger('test_acceptance')

# h halving twice from eps / 4, the edge of the semiclassical regime
H_VALUES = (0.0025, 0.00125, 0.000625)
# mollifier half-width, 1 % of lambda0
EPS = 0.01
# lambda grid end; LAMBDA_MAX + EPS stays inside the spectra
LAMBDA_MAX = 0.98
# lambda step of 0.0025, a quarter of EPS
POINTS = 393

REFERENCE = RadialProfile.power_law(2, 1.0, 2.0, 1.0)


def spectral_report(spectra):
    extracted = extract_invariants(spectra, lambda_grid(LAMBDA_MAX, POINTS), EPS)
    volume = recover_volume(extracted.A, 2)
    I1, I2 = recover_surface_invariants(extracted.A, extracted.B, 2)
    return build_report(ReconstructionInputs(2, volume, I1, I2, {"curves": "spectral"}), REFERENCE)


def oracle_curves(P, points=99, quad=QuadratureParams()):
    volume = volume_curve(P, LAMBDA_MAX, points, quad)
    step = LAMBDA_MAX / (points - 1)
    surface = surface_invariant_curves(P, step, LAMBDA_MAX, points - 1)
    return volume, surface["I1"], surface["I2"]


def oracle_F(P, s0=0.25):
    surface = surface_invariant_curves(P, s0, P.lambda0, 76)
    return surface["I2"].with_values(surface["I2"].values / surface["I1"].values, label="F")


@pytest.fixture(scope="module")
def oscillator_spectra():
    return [exact_harmonic_spectrum(2, h, 1.0) for h in H_VALUES]


@pytest.fixture(scope="module")
def oscillator_report(oscillator_spectra):
    return spectral_report(oscillator_spectra)


def test_profile_from_spectra(oscillator_report):
    error = oscillator_report.metrics["max_relative_error"]
    assert error < 0.02
    logger.info(f"✓ Spectral profile error {error:.3%}")


def test_profile_from_oracle_curves():
    P = AnalyticPotential.harmonic(2)
    volume = volume_curve(P, LAMBDA_MAX, POINTS, QuadratureParams(cells_2d=800, refine=8))
    _, I1, I2 = oracle_curves(P)
    report = build_report(ReconstructionInputs(2, volume, I1, I2, {"curves": "oracle"}), REFERENCE)
    assert report.metrics["max_relative_error"] < 0.005
    assert report.verdict.radial


def test_cubic_spectral_noise_barely_moves_the_profile(oscillator_spectra, oscillator_report):
    noisy = spectral_report([perturb_spectrum(s, power=3.0) for s in oscillator_spectra])
    clean_error = oscillator_report.metrics["max_relative_error"]
    noisy_error = noisy.metrics["max_relative_error"]
    assert abs(noisy_error - clean_error) < 0.005


def test_oscillator_is_certified_radial():
    P = AnalyticPotential.harmonic(2)
    volume, I1, I2 = oracle_curves(P)
    _, _, _, verdict = defect_diagnosis(volume, I1, I2, 2)
    assert verdict.radial
    assert verdict.threshold >= 3e-3

    cert = flowline_certificate(P, oracle_F(P), FlowlineConfig())
    assert cert.accepted
    assert np.linalg.norm(cert.center) < 1e-4


def test_ellipse_is_rejected_twice():
    """Weights (1, 4): relative defect 0.2 on every level, curved flowlines"""
    P = AnalyticPotential.anisotropic([1.0, 4.0])
    volume, I1, I2 = oracle_curves(P)
    _, _, _, verdict = defect_diagnosis(volume, I1, I2, 2)
    assert not verdict.radial
    assert verdict.max_relative_defect > 0.05
    assert verdict.max_relative_defect == pytest.approx(0.2, rel=0.05)

    cert = flowline_certificate(P, oracle_F(P), FlowlineConfig())
    assert not cert.accepted


def test_translation_changes_nothing_but_the_center():
    centered = AnalyticPotential.harmonic(2)
    moved = AnalyticPotential.harmonic(2, center=[0.2, 0.1])

    a, b = build_spectrum(centered, 0.01, 1.0), build_spectrum(moved, 0.01, 1.0)
    assert np.array_equal(a.energies, b.energies)
    assert np.array_equal(a.multiplicities, b.multiplicities)

    profiles = []
    for P in (centered, moved):
        volume, I1, I2 = oracle_curves(P)
        profiles.append(build_report(ReconstructionInputs(2, volume, I1, I2)).profile)
    assert np.allclose(profiles[0].R_table, profiles[1].R_table, rtol=1e-6, atol=1e-9)

    cert = flowline_certificate(moved, oracle_F(moved), FlowlineConfig())
    assert cert.accepted
    assert np.allclose(cert.center, [0.2, 0.1], atol=1e-3)


def test_perturbed_oscillator_is_not_radial():
    P = AnalyticPotential.perturbed(2, 0.2, 3)
    volume, I1, I2 = oracle_curves(P)
    _, _, _, verdict = defect_diagnosis(volume, I1, I2, 2)
    assert not verdict.radial
    assert math.isfinite(verdict.max_relative_defect)
