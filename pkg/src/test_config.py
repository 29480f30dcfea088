#!/usr/bin/env python3
"""
Tests for run config parsing:
- YAML defaults merged under JSON configs
- parse-time validation errors
- deterministic config digests
"""

import json
import sys
from pathlib import Path

import pytest

# Add parent directory to path to import our modules
sys.path.append(str(Path(__file__).parent.parent))

from src.config import (
    Config,
    ProfileConfig,
    h_values,
    load_defaults,
    load_run_config,
    parse_run_config,
)
from src.errors import ConfigurationError
from src.logger import get_logger

logger = get_logger('test_config')


def harmonic(**extra):
    raw = {"potential": {"family": "harmonic", "n": 2, "lambda0": 1.0}}
    raw.update(extra)
    return raw


def test_defaults_fill_every_section():
    """A minimal config picks up the shipped defaults"""
    cfg = parse_run_config(harmonic())
    defaults = load_defaults()

    assert cfg.solver.grid_points == defaults["solver"]["grid_points"]
    assert cfg.eps == pytest.approx(0.01)
    assert cfg.grids.lambda_max == pytest.approx(0.98)
    assert len(cfg.grids.h) == 6
    assert cfg.grids.h[0] == pytest.approx(0.05)
    assert cfg.flowlines.s0 == pytest.approx(0.25)
    assert cfg.report.metric_range == (0.1, 0.9)
    logger.info("✓ Defaults merged")


def test_explicit_h_grid_and_eps():
    cfg = parse_run_config(harmonic(grids={"h": [0.01, 0.04, 0.02]}, mollifier={"eps": 0.2}))
    assert cfg.grids.h == (0.01, 0.04, 0.02)
    assert h_values(cfg) == [0.04, 0.02, 0.01]
    assert cfg.eps == 0.2


def test_lambda0_scales_fractions():
    cfg = parse_run_config({"potential": {"family": "harmonic", "n": 3, "lambda0": 2.0}})
    assert cfg.eps == pytest.approx(0.02)
    assert cfg.grids.lambda_max == pytest.approx(1.96)
    assert cfg.grids.h[0] == pytest.approx(0.1)


@pytest.mark.parametrize("raw", [
    harmonic(grids={"h": [0.01, -0.02]}),
    harmonic(grids={"h": [0.0]}),
    {"potential": {"family": "harmonic", "n": 2, "lambda0": 0.0}},
    {"potential": {"family": "harmonic", "n": 1, "lambda0": 1.0}},
    {"potential": {"family": "torus", "n": 2, "lambda0": 1.0}},
    {"potential": {"family": "anisotropic", "n": 2, "lambda0": 1.0, "params": [1.0]}},
    {"potential": {"family": "anisotropic", "n": 2, "lambda0": 1.0, "params": [1.0, -4.0]}},
    {"potential": {"family": "perturbed", "n": 2, "lambda0": 1.0, "params": [1.5, 3]}},
    {"potential": {"family": "radial", "n": 2, "lambda0": 1.0}},
    harmonic(solver={"grid_points": 50}),
    harmonic(solver={"method": "shooting"}),
    harmonic(diagnose={"bins": 5}),
    harmonic(inversion={"savgol_window": 4}),
    harmonic(report={"metric_range": [0.9, 0.1]}),
])
def test_invalid_configs_raise(raw):
    with pytest.raises(ConfigurationError):
        parse_run_config(raw)


def test_radial_grid_must_leave_room_for_the_mollifier():
    raw = {
        "potential": {"family": "radial", "n": 2, "lambda0": 1.0,
                      "profile": {"kind": "power", "c": 1.0, "p": 2.0}},
        "grids": {"lambda_max_fraction": 0.98},
        "mollifier": {"eps": 0.05},
    }
    with pytest.raises(ConfigurationError):
        parse_run_config(raw)


def test_table_profile_is_parsed():
    raw = {"potential": {"family": "radial", "n": 2, "lambda0": 1.0,
                         "profile": {"kind": "table", "r": [0, 0.5, 1], "values": [0, 0.25, 1]}}}
    cfg = parse_run_config(raw)
    assert cfg.potential.profile == ProfileConfig(kind="table", r=(0.0, 0.5, 1.0), values=(0.0, 0.25, 1.0))


def test_digest_is_deterministic_and_sensitive():
    a = parse_run_config(harmonic())
    b = parse_run_config(harmonic())
    c = parse_run_config(harmonic(seed=7))
    assert a.digest == b.digest
    assert a.digest != c.digest


def test_load_run_config_from_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(harmonic(output_dir="somewhere")))

    cfg = load_run_config(path)
    assert cfg.output_dir == "somewhere"

    overridden = load_run_config(path, {"output_dir": str(tmp_path / "out")})
    assert overridden.output_dir == str(tmp_path / "out")


def test_load_run_config_errors(tmp_path):
    with pytest.raises(ConfigurationError):
        load_run_config(tmp_path / "missing.json")

    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigurationError):
        load_run_config(bad)

    listed = tmp_path / "list.json"
    listed.write_text("[1, 2]")
    with pytest.raises(ConfigurationError):
        load_run_config(listed)


def test_ambient_config_validates(monkeypatch):
    assert Config.validate()
    monkeypatch.setattr(Config, "WORKERS", 0)
    with pytest.raises(ConfigurationError):
        Config.validate()
