#!/usr/bin/env python3
"""
Tests for profile reconstruction, the isoperimetric defect and the radiality verdict
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

from src.errors import AssemblyError, DivisionError, InversionError, NumericalError
from src.lib.curves import Curve
from src.logger import get_logger
from src.potentials import AnalyticPotential, RadialProfile, closed_form_surface_invariants
from src.reconstruct import (
    ReconstructionInputs,
    build_report,
    defect_diagnosis,
    gradient_modulus_profile,
    isoperimetric_defect,
    radial_profile_from_volume,
    radiality_verdict,
    resample,
)

logger = get_logger('test_reconstruct')


def closed_form_curves(P, lo=0.0, hi=1.0, points=101):
    s = np.linspace(lo, hi, points)
    rows = np.array([closed_form_surface_invariants(P, x) if x > 0 else (0.0, math.nan, 0.0) for x in s])
    if lo == 0.0:
        rows[0, 1] = rows[1, 1]
    return (Curve(lo, hi, rows[:, 0], "volume"), Curve(lo, hi, rows[:, 1], "I1"),
            Curve(lo, hi, rows[:, 2], "I2"))


def test_profile_from_the_oscillator_volume():
    """v = pi s in the plane means R(r) = r^2"""
    v = Curve.from_function("volume", 0.0, 1.0, 101, lambda s: math.pi * s)
    profile = radial_profile_from_volume(v, 2)
    assert profile.R0 == pytest.approx(1.0)
    assert profile.lambda0 == pytest.approx(1.0)
    r = np.linspace(0.1, 0.9, 41)
    assert np.allclose(profile(r), r * r, atol=2e-3)
    logger.info("✓ R(r) = r^2 recovered")


def test_small_dips_are_smoothed_away():
    values = math.pi * np.linspace(0.0, 1.0, 51)
    values[20] -= 0.01
    profile = radial_profile_from_volume(Curve(0.0, 1.0, values, "volume"), 2)
    assert np.all(np.diff(profile.R_table) > 0)


@pytest.mark.parametrize("values", [
    [0.0, 1.0, 2.0, 1.0, 3.0],
    [1.0, 1.0, 1.0, 1.0],
])
def test_unusable_volume_curves(values):
    with pytest.raises(InversionError):
        radial_profile_from_volume(Curve(0.0, 1.0, values, "volume"), 2)


def test_defect_vanishes_for_the_oscillator():
    volume, I1, I2 = closed_form_curves(AnalyticPotential.harmonic(2))
    D = isoperimetric_defect(I1, I2, volume, 2)
    assert np.allclose(D.values, 0.0, atol=1e-12)


def test_defect_of_an_ellipse():
    """Weights (1, 4): D = pi^2 s / 2"""
    volume, I1, I2 = closed_form_curves(AnalyticPotential.anisotropic([1.0, 4.0]))
    D = isoperimetric_defect(I1, I2, volume, 2)
    assert np.allclose(D.values[1:], 0.5 * math.pi ** 2 * D.grid[1:])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(min_value=0.1, max_value=10.0), min_size=2, max_size=4))
def test_defect_is_never_negative(weights):
    volume, I1, I2 = closed_form_curves(AnalyticPotential.anisotropic(weights), lo=0.05, points=21)
    D = isoperimetric_defect(I1, I2, volume, len(weights))
    assert np.all(D.values >= -1e-9 * I1.values * I2.values)


def test_defect_needs_one_grid():
    volume, I1, I2 = closed_form_curves(AnalyticPotential.harmonic(2))
    with pytest.raises(NumericalError):
        isoperimetric_defect(I1.window(0.1, 0.9), I2, volume, 2)


def test_F_is_grad_squared_for_the_oscillator():
    _, I1, I2 = closed_form_curves(AnalyticPotential.harmonic(2))
    F = gradient_modulus_profile(I1, I2)
    assert np.allclose(F.values, 4 * F.grid)
    assert "caveat" in F.meta


def test_F_rejects_nonpositive_I1():
    I1 = Curve(0.0, 1.0, [1.0, 0.0, 1.0], "I1")
    I2 = Curve(0.0, 1.0, [1.0, 1.0, 1.0], "I2")
    with pytest.raises(DivisionError):
        gradient_modulus_profile(I1, I2)


def test_verdict_separates_circles_from_ellipses():
    for weights, radial in (([1.0, 1.0], True), ([1.0, 4.0], False)):
        volume, I1, I2 = closed_form_curves(AnalyticPotential.anisotropic(weights))
        verdict = radiality_verdict(isoperimetric_defect(I1, I2, volume, 2), I1, I2)
        assert verdict.radial is radial
        assert verdict.threshold == pytest.approx(3e-3)
    assert verdict.max_relative_defect == pytest.approx(0.2)


def test_resample_onto_a_window():
    volume, I1, _ = closed_form_curves(AnalyticPotential.harmonic(2))
    target = I1.window(0.1, 0.9)
    moved = resample(volume, target)
    assert moved.same_grid(target)
    assert np.allclose(moved.values, math.pi * target.grid)


def test_diagnosis_uses_the_interior_levels():
    volume, I1, I2 = closed_form_curves(AnalyticPotential.harmonic(2))
    defect, F, v, verdict = defect_diagnosis(volume, I1, I2, 2)
    assert defect.grid_min == pytest.approx(0.1)
    assert defect.grid_max == pytest.approx(0.9)
    assert verdict.radial


def test_report_for_the_oscillator():
    volume, I1, I2 = closed_form_curves(AnalyticPotential.harmonic(2), points=1001)
    inputs = ReconstructionInputs(2, volume, I1, I2, {"source": "closed-form"})
    report = build_report(inputs, RadialProfile.power_law(2, 1.0, 2.0, 1.0))
    assert report.metrics["max_relative_error"] < 1e-2
    assert report.verdict.radial
    payload = report.to_json()
    assert payload["provenance"] == {"source": "closed-form"}
    assert payload["verdict"]["radial"] is True
    assert len(payload["profile"]) == report.profile.r_table.size


def test_report_without_reference_has_no_metrics():
    volume, I1, I2 = closed_form_curves(AnalyticPotential.harmonic(2))
    report = build_report(ReconstructionInputs(2, volume, I1, I2))
    assert report.metrics is None


def test_report_needs_every_stage_output():
    volume, _, _ = closed_form_curves(AnalyticPotential.harmonic(2))
    with pytest.raises(AssemblyError):
        build_report(ReconstructionInputs(2, volume=volume))
