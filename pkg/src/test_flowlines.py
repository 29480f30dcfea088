#!/usr/bin/env python3
"""
Tests for gradient flowlines and the flowline radiality certificate
"""

import json
import math
import sys
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path to import our modules
sys.path.append(str(Path(__file__).parent.parent))

from src.config import FlowlineConfig
from src.errors import (
    DegenerateTrajectoryError,
    DomainError,
    IllConditionedError,
    InsufficientDataError,
    InvalidProfileError,
    NumericalError,
    StagnationError,
)
from src.flowlines import (
    Trajectory,
    common_center_estimate,
    flowline_certificate,
    integrate_flowline,
    level_set_starts,
    level_transport_check,
    line_deviation,
    write_trajectories,
)
from src.lib.curves import Curve
from src.logger import get_logger
from src.potentials import AnalyticPotential

logger = get_logger('test_flowlines')


def straight(anchor, direction, count=5):
    t = np.linspace(0.0, 1.0, count)
    points = np.asarray(anchor) + t[:, None] * np.asarray(direction)
    return Trajectory(t, points, np.ones(count), t, 0.0)


def test_oscillator_flow_is_exponential():
    """x' = 2x gives V(t) = 0.25 e^{4t} from |x0|^2 = 0.25"""
    P = AnalyticPotential.harmonic(2)
    traj = integrate_flowline(P, [0.3, 0.4], t_end=0.2, dt=1e-3)
    expected = 0.25 * np.exp(4 * traj.times)
    assert np.max(np.abs(traj.values / expected - 1)) < 1e-6
    assert traj.s0 == pytest.approx(0.25)
    assert line_deviation(traj) < 1e-12
    logger.info(f"✓ {len(traj)} RK4 steps on the exponential law")


def test_flow_stops_at_the_top_level():
    P = AnalyticPotential.harmonic(2)
    traj = integrate_flowline(P, [0.3, 0.4], t_end=10.0, dt=1e-3)
    assert traj.end_level >= 1.0
    assert traj.values[-2] < 1.0
    assert traj.times[-1] < 0.4


def test_flow_from_the_minimum_stagnates():
    P = AnalyticPotential.harmonic(2)
    with pytest.raises(StagnationError):
        integrate_flowline(P, [0.0, 0.0], t_end=1.0, dt=1e-3)


def test_flow_must_start_in_the_box():
    P = AnalyticPotential.harmonic(2)
    with pytest.raises(DomainError):
        integrate_flowline(P, [3.0, 0.0], t_end=1.0, dt=1e-3)


def test_trajectory_times_must_increase():
    with pytest.raises(NumericalError):
        Trajectory([0.0, 0.0], [[0.0, 0.0], [1.0, 0.0]], [1.0, 1.0], [0.0, 1.0], 0.0)


def test_line_deviation_of_an_arc():
    theta = np.linspace(0.0, math.pi / 2, 50)
    points = np.column_stack([np.cos(theta), np.sin(theta)])
    arc = Trajectory(theta, points, np.ones(50), theta, 0.0)
    assert line_deviation(arc) > 0.05
    assert line_deviation(straight([0.1, 0.1], [1.0, 2.0])) < 1e-12


def test_line_deviation_of_a_point():
    still = Trajectory([0.0, 1.0, 2.0], [[0.5, 0.5]] * 3, [1.0] * 3, [0.0, 0.0, 0.0], 0.0)
    with pytest.raises(DegenerateTrajectoryError):
        line_deviation(still)


def test_center_of_crossing_lines():
    center = np.array([0.2, 0.1])
    trajs = [straight(center + 0.1 * d, d) for d in map(np.array, ([1.0, 0.0], [0.0, 1.0], [1.0, 1.0]))]
    found, spread = common_center_estimate(trajs)
    assert np.allclose(found, center)
    assert spread < 1e-12


def test_parallel_lines_have_no_center():
    trajs = [straight([0.0, 0.0], [1.0, 0.0]), straight([0.0, 1.0], [1.0, 0.0])]
    with pytest.raises(IllConditionedError):
        common_center_estimate(trajs)


def test_center_needs_n_lines():
    with pytest.raises(InsufficientDataError):
        common_center_estimate([straight([0.0, 0.0], [1.0, 0.0])])
    with pytest.raises(InsufficientDataError):
        common_center_estimate([])


def test_level_transport_on_the_oscillator():
    """dV/dt = |grad V|^2 = 4V on every level of |x|^2"""
    P = AnalyticPotential.harmonic(2)
    traj = integrate_flowline(P, [0.3, 0.4], t_end=0.3, dt=1e-3)
    assert level_transport_check(traj, lambda s: 4 * s) < 1e-6
    F = Curve.from_function("F", 0.0, 1.0, 1001, lambda s: 4 * s)
    assert level_transport_check(traj, F) < 1e-5
    assert level_transport_check(traj, lambda s: 2 * s) > 0.05


def test_transport_needs_a_positive_profile():
    P = AnalyticPotential.harmonic(2)
    traj = integrate_flowline(P, [0.3, 0.4], t_end=0.3, dt=1e-3)
    with pytest.raises(InvalidProfileError):
        level_transport_check(traj, lambda s: s - 0.5)


def test_starts_lie_on_the_level_set():
    P = AnalyticPotential.anisotropic([1.0, 4.0])
    starts = level_set_starts(P, 0.25, 6)
    assert starts.shape == (6, 2)
    assert np.allclose(P.values(starts), 0.25, atol=1e-10)


def test_certificate_accepts_the_oscillator():
    P = AnalyticPotential.harmonic(2)
    cert = flowline_certificate(P, lambda s: 4 * s, FlowlineConfig())
    assert cert.accepted
    assert len(cert.trajectories) == 8
    assert np.linalg.norm(cert.center) < 1e-4
    assert cert.max_transport_deviation < 1e-3


def test_certificate_rejects_an_ellipse():
    P = AnalyticPotential.anisotropic([1.0, 4.0])
    cert = flowline_certificate(P, lambda s: 10 * s, FlowlineConfig())
    assert not cert.accepted
    assert cert.max_line_deviation > 1e-3


def test_certificate_follows_a_translation():
    P = AnalyticPotential.harmonic(2, center=[0.2, 0.1])
    cert = flowline_certificate(P, lambda s: 4 * s, FlowlineConfig())
    assert cert.accepted
    assert np.allclose(cert.center, [0.2, 0.1], atol=1e-3)


def test_empty_certificate():
    cert = flowline_certificate(AnalyticPotential.harmonic(2), lambda s: 4 * s, FlowlineConfig(count=0))
    assert not cert.accepted
    assert cert.center is None
    assert math.isnan(cert.spread)
    assert cert.to_json()["trajectories"] == 0


def test_trajectory_files(tmp_path):
    P = AnalyticPotential.harmonic(3)
    cert = flowline_certificate(P, lambda s: 4 * s, FlowlineConfig(count=4, dt=2e-3))
    paths = write_trajectories(tmp_path, cert, {"s0": 0.25})
    assert len(paths) == 5
    header = (tmp_path / "trajectory_0.csv").read_text().splitlines()[0]
    assert header == "t,x_1,x_2,x_3,V"
    payload = json.loads((tmp_path / "certificate.json").read_text())
    assert payload["s0"] == 0.25
    assert payload["trajectories"] == 4
