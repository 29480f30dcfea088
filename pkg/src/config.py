"""
Configuration settings for the radial inverse spectral toolkit

Two layers:
- Config: process-level ambient settings read from the environment (.env),
  limited to logging and worker count. Nothing here changes a number.
- RunConfig: the numerical pipeline description, parsed from a single JSON
  file and merged over src/config/pipeline_defaults.yaml.
"""
import copy
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import yaml
from dotenv import load_dotenv

from src.errors import ConfigurationError

# Load environment variables from .env file
load_dotenv()

DEFAULTS_PATH = Path(__file__).parent / "config" / "pipeline_defaults.yaml"

FAMILIES = ("radial", "harmonic", "anisotropic", "perturbed", "plateau")
SOLVER_METHODS = ("auto", "exact", "finite-difference")
DERIVATIVE_SCHEMES = ("auto", "savgol", "volterra", "abel")
SECOND_INVARIANT_METHODS = ("antiderivative", "bump-basis")


class Config:
    """Application configuration"""

    # Logging Configuration
    LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')
    LOG_FILE = os.getenv('LOG_FILE', '')

    # Thread pool size for independent (h, l) and lambda-grid work
    WORKERS = int(os.getenv('WORKERS', '4'))

    @classmethod
    def validate(cls):
        """Validate ambient configuration"""
        if cls.WORKERS < 1:
            raise ConfigurationError(f"WORKERS must be >= 1, got {cls.WORKERS}")
        return True


@dataclass(frozen=True)
class ProfileConfig:
    kind: str  # power | table
    c: float = 1.0
    p: float = 2.0
    r: Tuple[float, ...] = ()
    values: Tuple[float, ...] = ()


@dataclass(frozen=True)
class PotentialConfig:
    family: str
    n: int
    lambda0: float
    params: Tuple[float, ...] = ()
    profile: Optional[ProfileConfig] = None
    center: Optional[Tuple[float, ...]] = None
    half_width: Optional[float] = None


@dataclass(frozen=True)
class SolverParams:
    """Finite-difference radial solver parameters"""
    method: str = "auto"
    r_max: Optional[float] = None
    grid_points: int = 4000
    l_max_limit: int = 5000
    tolerance: float = 1e-12


@dataclass(frozen=True)
class GridConfig:
    h: Tuple[float, ...]
    lambda_max: float
    lambda_points: int
    s_points: int


@dataclass(frozen=True)
class QuadratureParams:
    cells_2d: int = 400
    cells_3d: int = 64
    cells_nd: int = 24
    refine: int = 4
    contour_points: int = 801
    angular_nodes: int = 48

    def cells_for(self, n: int) -> int:
        if n == 2:
            return self.cells_2d
        if n == 3:
            return self.cells_3d
        return self.cells_nd


@dataclass(frozen=True)
class InversionConfig:
    tikhonov_weight: float = 1e-6
    monotone: bool = True
    derivative_scheme: str = "auto"
    savgol_window: int = 5
    savgol_order: int = 2
    second_invariant_method: str = "antiderivative"

    def scheme_for(self, n: int) -> str:
        if self.derivative_scheme != "auto":
            return self.derivative_scheme
        return "savgol" if n == 2 else "volterra"


@dataclass(frozen=True)
class DiagnoseConfig:
    bins: int = 50
    atom_factor: float = 10.0
    atom_window: int = 3
    defect_noise_factor: float = 3.0


@dataclass(frozen=True)
class FlowlineConfig:
    count: int = 8
    s0: float = 0.25
    dt: float = 1e-3
    t_end: float = 10.0
    line_tolerance: float = 1e-6
    spread_tolerance: float = 1e-4
    transport_tolerance: float = 1e-3


@dataclass(frozen=True)
class ReportConfig:
    metric_range: Tuple[float, float] = (0.1, 0.9)
    monotone_violation_limit: float = 0.05


@dataclass(frozen=True)
class RunConfig:
    """Parsed, validated pipeline configuration"""
    potential: PotentialConfig
    solver: SolverParams
    grids: GridConfig
    eps: float
    quadrature: QuadratureParams
    inversion: InversionConfig
    diagnose: DiagnoseConfig
    flowlines: FlowlineConfig
    report: ReportConfig
    output_dir: str
    seed: Optional[int] = None
    digest: str = field(default="", compare=False)


def load_defaults() -> Dict[str, Any]:
    """Load the shipped YAML defaults."""
    with open(DEFAULTS_PATH) as f:
        return yaml.safe_load(f)


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _positive(name: str, value: Any) -> float:
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{name} must be a number, got {value!r}")
    if not math.isfinite(number) or number <= 0:
        raise ConfigurationError(f"{name} must be > 0, got {value!r}")
    return number


def _count(name: str, value: Any, minimum: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigurationError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return value


def _parse_potential(raw: Dict[str, Any]) -> PotentialConfig:
    family = raw.get("family")
    if family not in FAMILIES:
        raise ConfigurationError(f"Unknown potential family {family!r}; expected one of {FAMILIES}")
    n = _count("potential.n", raw.get("n"), 2)
    lambda0 = _positive("potential.lambda0", raw.get("lambda0"))
    params = tuple(float(p) for p in raw.get("params") or ())

    profile = None
    if raw.get("profile") is not None:
        prof = raw["profile"]
        kind = prof.get("kind")
        if kind == "power":
            profile = ProfileConfig(
                kind="power",
                c=_positive("profile.c", prof.get("c", 1.0)),
                p=_positive("profile.p", prof.get("p", 2.0)),
            )
        elif kind == "table":
            r = tuple(float(x) for x in prof.get("r", ()))
            values = tuple(float(x) for x in prof.get("values", ()))
            if len(r) < 2 or len(r) != len(values):
                raise ConfigurationError("profile.r and profile.values must have equal length >= 2")
            profile = ProfileConfig(kind="table", r=r, values=values)
        else:
            raise ConfigurationError(f"Unknown profile kind {kind!r}; expected 'power' or 'table'")

    if family == "radial" and profile is None:
        raise ConfigurationError("family 'radial' requires a profile")
    if family == "anisotropic":
        if len(params) != n or any(w <= 0 for w in params):
            raise ConfigurationError(f"anisotropic family needs {n} positive axis weights, got {params}")
    if family == "perturbed":
        if len(params) != 2 or abs(params[0]) >= 1 or params[1] < 0 or params[1] != int(params[1]):
            raise ConfigurationError("perturbed family needs params [amplitude |a|<1, integer mode m>=0]")
    if family == "plateau":
        if len(params) != 2 or not 0 < params[0] < params[1]:
            raise ConfigurationError("plateau family needs params [r1, r2] with 0 < r1 < r2")

    center = None
    if raw.get("center") is not None:
        center = tuple(float(c) for c in raw["center"])
        if len(center) != n:
            raise ConfigurationError(f"potential.center must have {n} components")

    half_width = raw.get("half_width")
    if half_width is not None:
        half_width = _positive("potential.half_width", half_width)

    return PotentialConfig(
        family=family, n=n, lambda0=lambda0, params=params, profile=profile,
        center=center, half_width=half_width,
    )


def _parse_grids(raw: Dict[str, Any], lambda0: float) -> GridConfig:
    if raw.get("h"):
        hs = tuple(_positive("grids.h", h) for h in raw["h"])
    else:
        h0 = _positive("grids.h0_fraction", raw.get("h0_fraction")) * lambda0
        count = _count("grids.h_count", raw.get("h_count"), 1)
        ratio = _positive("grids.h_ratio", raw.get("h_ratio"))
        hs = tuple(h0 * ratio ** k for k in range(count))
    if not hs:
        raise ConfigurationError("grids.h must be non-empty")
    return GridConfig(
        h=hs,
        lambda_max=_positive("grids.lambda_max_fraction", raw.get("lambda_max_fraction")) * lambda0,
        lambda_points=_count("grids.lambda_points", raw.get("lambda_points"), 2),
        s_points=_count("grids.s_points", raw.get("s_points"), 2),
    )


def parse_run_config(raw: Dict[str, Any]) -> RunConfig:
    """
    Validate a merged configuration mapping and build a RunConfig.

    Args:
        raw: user mapping (merged over the YAML defaults here)

    Returns:
        RunConfig

    Raises:
        ConfigurationError on any invalid field
    """
    raw = _deep_merge(load_defaults(), raw)
    potential = _parse_potential(raw.get("potential") or {})
    lambda0 = potential.lambda0

    solver_raw = raw.get("solver") or {}
    method = solver_raw.get("method", "auto")
    if method not in SOLVER_METHODS:
        raise ConfigurationError(f"solver.method must be one of {SOLVER_METHODS}, got {method!r}")
    r_max = solver_raw.get("r_max")
    solver = SolverParams(
        method=method,
        r_max=None if r_max is None else _positive("solver.r_max", r_max),
        grid_points=_count("solver.grid_points", solver_raw.get("grid_points"), 100),
        l_max_limit=_count("solver.l_max_limit", solver_raw.get("l_max_limit"), 1),
        tolerance=_positive("solver.tolerance", solver_raw.get("tolerance")),
    )

    grids = _parse_grids(raw.get("grids") or {}, lambda0)
    eps = _positive("mollifier.eps_fraction", (raw.get("mollifier") or {}).get("eps_fraction")) * lambda0
    if "eps" in (raw.get("mollifier") or {}):
        eps = _positive("mollifier.eps", raw["mollifier"]["eps"])
    if grids.lambda_max + eps > lambda0 * (1 + 1e-12) and potential.family == "radial":
        raise ConfigurationError("lambda grid plus mollifier width exceeds lambda0")

    quad_raw = raw.get("quadrature") or {}
    quadrature = QuadratureParams(
        cells_2d=_count("quadrature.cells_2d", quad_raw.get("cells_2d"), 10),
        cells_3d=_count("quadrature.cells_3d", quad_raw.get("cells_3d"), 10),
        cells_nd=_count("quadrature.cells_nd", quad_raw.get("cells_nd"), 4),
        refine=_count("quadrature.refine", quad_raw.get("refine"), 1),
        contour_points=_count("quadrature.contour_points", quad_raw.get("contour_points"), 11),
        angular_nodes=_count("quadrature.angular_nodes", quad_raw.get("angular_nodes"), 4),
    )

    inv_raw = raw.get("inversion") or {}
    scheme = inv_raw.get("derivative_scheme", "auto")
    if scheme not in DERIVATIVE_SCHEMES:
        raise ConfigurationError(f"inversion.derivative_scheme must be one of {DERIVATIVE_SCHEMES}")
    second = inv_raw.get("second_invariant_method", "antiderivative")
    if second not in SECOND_INVARIANT_METHODS:
        raise ConfigurationError(f"inversion.second_invariant_method must be one of {SECOND_INVARIANT_METHODS}")
    weight = float(inv_raw.get("tikhonov_weight", 1e-6))
    if not math.isfinite(weight) or weight < 0:
        raise ConfigurationError("inversion.tikhonov_weight must be finite and >= 0")
    window = _count("inversion.savgol_window", inv_raw.get("savgol_window"), 3)
    if window % 2 == 0:
        raise ConfigurationError("inversion.savgol_window must be odd")
    inversion = InversionConfig(
        tikhonov_weight=weight,
        monotone=bool(inv_raw.get("monotone", True)),
        derivative_scheme=scheme,
        savgol_window=window,
        savgol_order=_count("inversion.savgol_order", inv_raw.get("savgol_order"), 1),
        second_invariant_method=second,
    )

    diag_raw = raw.get("diagnose") or {}
    diagnose = DiagnoseConfig(
        bins=_count("diagnose.bins", diag_raw.get("bins"), 10),
        atom_factor=_positive("diagnose.atom_factor", diag_raw.get("atom_factor")),
        atom_window=_count("diagnose.atom_window", diag_raw.get("atom_window"), 1),
        defect_noise_factor=_positive("diagnose.defect_noise_factor", diag_raw.get("defect_noise_factor")),
    )

    flow_raw = raw.get("flowlines") or {}
    s0 = flow_raw.get("s0")
    flowlines = FlowlineConfig(
        count=_count("flowlines.count", flow_raw.get("count"), 0),
        s0=_positive("flowlines.s0", s0) if s0 is not None
        else _positive("flowlines.s0_fraction", flow_raw.get("s0_fraction")) * lambda0,
        dt=_positive("flowlines.dt", flow_raw.get("dt")),
        t_end=_positive("flowlines.t_end", flow_raw.get("t_end")),
        line_tolerance=_positive("flowlines.line_tolerance", flow_raw.get("line_tolerance")),
        spread_tolerance=_positive("flowlines.spread_tolerance", flow_raw.get("spread_tolerance")),
        transport_tolerance=_positive("flowlines.transport_tolerance", flow_raw.get("transport_tolerance")),
    )

    rep_raw = raw.get("report") or {}
    lo, hi = rep_raw.get("metric_range", (0.1, 0.9))
    if not 0 <= lo < hi <= 1:
        raise ConfigurationError("report.metric_range must satisfy 0 <= lo < hi <= 1")
    report = ReportConfig(
        metric_range=(float(lo), float(hi)),
        monotone_violation_limit=_positive(
            "report.monotone_violation_limit", rep_raw.get("monotone_violation_limit")),
    )

    canonical = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return RunConfig(
        potential=potential,
        solver=solver,
        grids=grids,
        eps=eps,
        quadrature=quadrature,
        inversion=inversion,
        diagnose=diagnose,
        flowlines=flowlines,
        report=report,
        output_dir=str(raw.get("output_dir") or "out"),
        seed=raw.get("seed"),
        digest=hashlib.sha1(canonical.encode("utf-8")).hexdigest(),
    )


def load_run_config(path: Path, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Read a JSON run config, merge it over the YAML defaults and validate it.

    Args:
        path: JSON file
        overrides: optional mapping merged last (used by the CLI --out flag)

    Returns:
        RunConfig
    """
    try:
        with open(path) as f:
            user = json.load(f)
    except FileNotFoundError:
        raise ConfigurationError(f"Config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Config file {path} is not valid JSON: {e}")
    if not isinstance(user, dict):
        raise ConfigurationError(f"Config file {path} must hold a JSON object")
    merged = _deep_merge(load_defaults(), user)
    if overrides:
        merged = _deep_merge(merged, overrides)
    return parse_run_config(merged)


def h_values(config: RunConfig) -> List[float]:
    """h-grid in the order spectra are produced (largest first)."""
    return sorted(config.grids.h, reverse=True)
