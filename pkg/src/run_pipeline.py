#!/usr/bin/env python3
"""
Pipeline command line

Each subcommand runs one stage of the radial inverse spectral pipeline from a
JSON run config and writes its artifacts under the output directory:

    forward      spectra/spectrum_h<i>.csv + spectra/manifest.json
    oracle       oracle/{A,B,volume,I1,I2}.csv
    extract      invariants.csv + invariants.json
    invert       inversion/{volume,I1,I2}.csv
    reconstruct  report.json, profile.csv, plots/{profile,defect,F}.svg
    diagnose     diagnose/{defect,pushforward}.csv + diagnose/verdict.json
    flowlines    flowlines/trajectory_<k>.csv + flowlines/certificate.json

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 IO failure.
"""

import functools
import sys
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import click
import numpy as np

from src.abel import recover_surface_invariants, recover_volume
from src.config import Config, RunConfig, h_values, load_run_config
from src.errors import PipelineError
from src.flowlines import flowline_certificate, write_trajectories
from src.lib.artifacts import read_curve, write_csv, write_curve, write_json
from src.lib.curves import Curve
from src.lib.plots import line_plot
from src.logger import get_logger, setup_logging
from src.potentials import (
    AnalyticPotential,
    BoxQuadrature,
    RadialProfile,
    phase_space_curve,
    potential_from_config,
    pushforward_density,
    surface_invariant_curves,
    volume_curve,
    write_oracle_curves,
)
from src.reconstruct import (
    ReconstructionInputs,
    build_report,
    defect_diagnosis,
    profile_gradient_squared,
)
from src.spectra import build_spectrum, read_spectra, write_spectra
from src.traces import extract_invariants, lambda_grid, read_invariants, write_invariants

logger = get_logger('run_pipeline')


def stage(name: str):
    """Log start and finish of a command; map PipelineError to its exit code."""
    def decorator(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            start = time.perf_counter()
            logger.info(f"Stage {name} starting")
            try:
                result = fn(*args, **kwargs)
            except PipelineError as e:
                logger.error(f"Stage {name} failed ({type(e).__name__}): {e}")
                sys.exit(e.exit_code)
            logger.info(f"Stage {name} finished in {time.perf_counter() - start:.2f}s")
            return result
        return wrapper
    return decorator


@contextmanager
def step(name: str):
    """Name the sub-stage that raised before the failure propagates."""
    try:
        yield
    except PipelineError as e:
        logger.error(f"Sub-stage {name} failed: {e}")
        raise


def _load(config_path: str, out: Optional[str]) -> Tuple[RunConfig, Path]:
    Config.validate()
    overrides = {"output_dir": out} if out else None
    cfg = load_run_config(Path(config_path), overrides)
    return cfg, Path(cfg.output_dir)


def _provenance(cfg: RunConfig, stages: List[str], curves: Optional[str] = None) -> Dict[str, object]:
    info: Dict[str, object] = {"config_digest": cfg.digest, "stages": stages}
    if curves:
        info["curves"] = curves
    return info


def _reference(P: AnalyticPotential) -> Optional[RadialProfile]:
    """The true radial profile, when the potential has one."""
    if P.family == "harmonic":
        return RadialProfile.power_law(P.n, 1.0, 2.0, P.lambda0)
    if P.family == "radial":
        return P.profile
    return None


def _invert(cfg: RunConfig, A: Curve, B: Curve) -> Tuple[Curve, Curve, Curve]:
    n = cfg.potential.n
    with step("invert"):
        volume = recover_volume(A, n, cfg.inversion)
        I1, I2 = recover_surface_invariants(A, B, n, cfg.inversion)
    return volume, I1, I2


def _extract(cfg: RunConfig, spectra_dir: Path):
    with step("extract"):
        spectra = read_spectra(spectra_dir)
        grid = lambda_grid(cfg.grids.lambda_max, cfg.grids.lambda_points)
        return extract_invariants(spectra, grid, cfg.eps, cfg.inversion.second_invariant_method,
                                  cfg.inversion.tikhonov_weight)


def _curves_from_path(cfg: RunConfig, path: Path) -> Tuple[Tuple[Curve, Curve, Curve], str]:
    """(volume, I1, I2) from an inversion/oracle directory or an invariants CSV."""
    if path.is_dir():
        if (path / "volume.csv").exists() and (path / "I1.csv").exists():
            curves = tuple(read_curve(path / f"{name}.csv", name) for name in ("volume", "I1", "I2"))
            return curves, "oracle" if path.name == "oracle" else "spectral"
        A, B = read_curve(path / "A.csv", "A"), read_curve(path / "B.csv", "B")
        return _invert(cfg, A, B), "oracle"
    A, B = read_invariants(path)
    return _invert(cfg, A, B), "spectral"


@click.group()
@click.option("--log-level", default=None,
              type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
              help="Console log level (default INFO)")
def cli(log_level):
    """Radial inverse spectral pipeline."""
    if log_level:
        setup_logging(log_level)


config_option = click.option("--config", "config_path", required=True, type=click.Path(),
                             help="JSON run config")
out_option = click.option("--out", default=None, help="Output directory (overrides output_dir)")


@cli.command()
@config_option
@out_option
@stage("forward")
def forward(config_path, out):
    """Spectra for every h of the grid."""
    cfg, out_dir = _load(config_path, out)
    P = potential_from_config(cfg.potential)
    hs = h_values(cfg)
    logger.info(f"Forward: {P.family} n={P.n}, {len(hs)} h values, lambda_max={P.lambda0:g}")
    with step("forward"):
        spectra = [build_spectrum(P, h, P.lambda0, cfg.solver) for h in hs]
    write_spectra(spectra, out_dir / "spectra", _provenance(cfg, ["forward"]))


@cli.command()
@config_option
@out_option
@stage("oracle")
def oracle(config_path, out):
    """Quadrature oracle curves A, B, volume, I1, I2."""
    cfg, out_dir = _load(config_path, out)
    P = potential_from_config(cfg.potential)
    write_oracle_curves(P, out_dir / "oracle", cfg.grids.lambda_max, cfg.grids.lambda_points,
                        cfg.grids.s_points, cfg.quadrature)
    write_json(out_dir / "oracle" / "manifest.json", {**_provenance(cfg, ["oracle"], "oracle"),
                                                      "potential": P.describe()})


@cli.command()
@config_option
@out_option
@click.option("--spectra", "spectra_dir", default=None, type=click.Path(exists=True, file_okay=False),
              help="Spectra directory (default <out>/spectra)")
@stage("extract")
def extract(config_path, out, spectra_dir):
    """Invariant curves A_est and B_est from the spectra."""
    cfg, out_dir = _load(config_path, out)
    extracted = _extract(cfg, Path(spectra_dir) if spectra_dir else out_dir / "spectra")
    write_invariants(out_dir / "invariants.csv", extracted)
    manifest = {**extracted.summary(), "provenance": _provenance(cfg, ["forward", "extract"])}
    write_json(out_dir / "invariants.json", manifest)


@cli.command()
@config_option
@out_option
@click.option("--curves", "curves_path", required=True, type=click.Path(exists=True),
              help="invariants.csv or an oracle directory")
@stage("invert")
def invert(config_path, out, curves_path):
    """Sublevel volume and level-surface invariants from A and B."""
    cfg, out_dir = _load(config_path, out)
    path = Path(curves_path)
    if path.is_dir():
        A, B = read_curve(path / "A.csv", "A"), read_curve(path / "B.csv", "B")
    else:
        A, B = read_invariants(path)
    volume, I1, I2 = _invert(cfg, A, B)
    for curve, name in ((volume, "volume"), (I1, "I1"), (I2, "I2")):
        write_curve(out_dir / "inversion" / f"{name}.csv", curve)


@cli.command()
@config_option
@out_option
@click.option("--curves", "curves_path", default=None, type=click.Path(exists=True),
              help="inversion or oracle directory, or invariants.csv")
@click.option("--spectra", "spectra_dir", default=None, type=click.Path(exists=True, file_okay=False),
              help="Spectra directory: extract and invert first")
@click.option("--oracle", "use_oracle", is_flag=True, help="Feed oracle A and B to the inversion")
@stage("reconstruct")
def reconstruct(config_path, out, curves_path, spectra_dir, use_oracle):
    """Radial profile, defect, F and verdict, with plots."""
    if sum(bool(x) for x in (curves_path, spectra_dir, use_oracle)) != 1:
        raise click.UsageError("Give exactly one of --curves, --spectra, --oracle")
    cfg, out_dir = _load(config_path, out)
    P = potential_from_config(cfg.potential)

    if use_oracle:
        with step("oracle"):
            sampler = BoxQuadrature(P, cfg.quadrature)
            A = phase_space_curve(P, cfg.grids.lambda_max, cfg.grids.lambda_points, "one", cfg.quadrature, sampler)
            B = phase_space_curve(P, cfg.grids.lambda_max, cfg.grids.lambda_points, "grad-squared",
                                  cfg.quadrature, sampler)
        (volume, I1, I2), source, stages = _invert(cfg, A, B), "oracle", ["oracle", "invert"]
    elif spectra_dir:
        extracted = _extract(cfg, Path(spectra_dir))
        (volume, I1, I2), source, stages = _invert(cfg, extracted.A, extracted.B), "spectral", ["extract", "invert"]
    else:
        (volume, I1, I2), source = _curves_from_path(cfg, Path(curves_path))
        stages = ["invert"]
    stages.append("reconstruct")

    reference = _reference(P)
    with step("report"):
        inputs = ReconstructionInputs(cfg.potential.n, volume, I1, I2, _provenance(cfg, stages, source))
        report = build_report(inputs, reference, cfg.report, cfg.diagnose.defect_noise_factor)

    write_json(out_dir / "report.json", report.to_json())
    profile = report.profile
    write_csv(out_dir / "profile.csv", ("r", "R"), zip(profile.r_table, profile.R_table))

    series = [(profile.r_table, profile.R_table, "recovered")]
    if reference is not None:
        series.append((profile.r_table, reference.extended(profile.r_table), "reference"))
    line_plot(out_dir / "plots" / "profile.svg", series, "r", "R(r)", "Radial profile")
    line_plot(out_dir / "plots" / "defect.svg", [(report.defect.grid, report.defect.values, "D")],
              "s", "D(s)", "Isoperimetric defect")
    line_plot(out_dir / "plots" / "F.svg",
              [(report.F.grid, report.F.values, "I2 / I1"),
               (report.F.grid, profile_gradient_squared(profile, report.F.grid), "R'(rho(s))^2")],
              "s", "F(s)", "Gradient modulus profile")


@cli.command()
@config_option
@out_option
@stage("diagnose")
def diagnose(config_path, out):
    """Oracle-fed isoperimetric defect, radiality verdict and pushforward density."""
    cfg, out_dir = _load(config_path, out)
    P = potential_from_config(cfg.potential)
    grids, quad = cfg.grids, cfg.quadrature
    with step("oracle"):
        sampler = BoxQuadrature(P, quad)
        volume = volume_curve(P, grids.lambda_max, grids.s_points, quad, sampler)
        s_step = grids.lambda_max / (grids.s_points - 1)
        surface = surface_invariant_curves(P, s_step, grids.lambda_max, grids.s_points - 1, quad)
    with step("defect"):
        defect, F, _, verdict = defect_diagnosis(volume, surface["I1"], surface["I2"], P.n,
                                                 cfg.report.metric_range, cfg.diagnose.defect_noise_factor)
    with step("pushforward"):
        density = pushforward_density(P, cfg.diagnose.bins, quad, cfg.diagnose.atom_factor,
                                      cfg.diagnose.atom_window, sampler)

    diag_dir = out_dir / "diagnose"
    write_curve(diag_dir / "defect.csv", defect)
    atoms = set(density.atoms)
    rows = (
        (s, d, m, int(s in atoms))
        for s, d, m in zip(density.density.grid, density.density.values, density.bin_mass)
    )
    write_csv(diag_dir / "pushforward.csv", ("s", "density", "mass", "atom"), rows)
    write_json(diag_dir / "verdict.json", {
        **verdict.to_json(),
        "atoms": list(density.atoms),
        "pushforward_mass": density.total_mass,
        "provenance": _provenance(cfg, ["oracle", "diagnose"], "oracle"),
    })


@cli.command()
@config_option
@out_option
@stage("flowlines")
def flowlines(config_path, out):
    """Gradient flowlines from {V = s0} and the radiality certificate."""
    cfg, out_dir = _load(config_path, out)
    P = potential_from_config(cfg.potential)
    flow = cfg.flowlines
    F = None
    if flow.count > 0:
        with step("oracle"):
            surface = surface_invariant_curves(P, flow.s0, P.lambda0, cfg.grids.s_points, cfg.quadrature)
            F = surface["I2"].with_values(surface["I2"].values / surface["I1"].values, label="F")
    with step("certificate"):
        cert = flowline_certificate(P, F, flow)
    extra = {"provenance": _provenance(cfg, ["flowlines"], "oracle"), "s0": flow.s0}
    if cert.center is not None:
        extra["center_error"] = float(np.linalg.norm(cert.center - P.center))
    write_trajectories(out_dir / "flowlines", cert, extra)


if __name__ == "__main__":
    cli()
