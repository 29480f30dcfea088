"""
Gradient flowlines x'(t) = grad V(x(t)) and the radiality checks built on them.

For a radial V the flowlines are straight rays through one common center and
carry level sets to level sets: V(x(t)) solves dV/dt = F(V) with F = I2 / I1.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import PchipInterpolator

from src.config import Config, FlowlineConfig, QuadratureParams
from src.errors import (
    DegenerateTrajectoryError,
    DomainError,
    IllConditionedError,
    InsufficientDataError,
    InvalidProfileError,
    NumericalError,
    StagnationError,
)
from src.lib.artifacts import write_csv, write_json
from src.lib.curves import Curve
from src.logger import get_logger
from src.potentials import AnalyticPotential, BoxQuadrature
from src.transforms.geometry import fit_line, point_line_distances, polyline_length, sphere_directions

logger = get_logger('flowlines')

START_GRADIENT = 1e-8
STAGNATION_GRADIENT = 1e-10
CENTER_CONDITION_LIMIT = 1e8

Profile = Union[Curve, Callable[[np.ndarray], np.ndarray]]


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    points: np.ndarray
    speeds: np.ndarray
    values: np.ndarray
    s0: float

    def __post_init__(self):
        for name in ("times", "points", "speeds", "values"):
            array = np.array(getattr(self, name), dtype=float)
            array.setflags(write=False)
            object.__setattr__(self, name, array)
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise NumericalError("Trajectory times must be strictly increasing")

    def __len__(self):
        return int(self.times.size)

    @property
    def end_level(self) -> float:
        return float(self.values[-1])


def integrate_flowline(P: AnalyticPotential, x0, t_end: float, dt: float) -> Trajectory:
    """
    Classical RK4 with fixed step dt from x0 until t_end or V >= lambda0.

    Raises:
        StagnationError if |grad V| is too small at the start or collapses mid-flight
        NumericalError if V fails to increase over a step
    """
    x = np.array(x0, dtype=float)
    if not P.in_box(x):
        raise DomainError(f"Start point {x.tolist()} outside the evaluation box")
    grad = P.gradients(x)
    speed = float(np.linalg.norm(grad))
    if speed <= START_GRADIENT:
        raise StagnationError(f"|grad V| = {speed:.3g} at the start point {x.tolist()}")

    value = float(P.values(x))
    times, points, speeds, values = [0.0], [x.copy()], [speed], [value]
    steps = int(math.ceil(t_end / dt - 1e-9))
    for k in range(1, steps + 1):
        k1 = grad
        k2 = P.gradients(x + 0.5 * dt * k1)
        k3 = P.gradients(x + 0.5 * dt * k2)
        k4 = P.gradients(x + dt * k3)
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not P.in_box(x):
            raise DomainError(f"Flowline left the evaluation box at t={k * dt:g}")
        new_value = float(P.values(x))
        if not new_value > value:
            raise NumericalError(f"V did not increase along the flowline at t={k * dt:g}")
        grad = P.gradients(x)
        speed = float(np.linalg.norm(grad))
        if speed < STAGNATION_GRADIENT:
            raise StagnationError(f"|grad V| collapsed to {speed:.3g} at t={k * dt:g}")
        value = new_value
        times.append(k * dt)
        points.append(x.copy())
        speeds.append(speed)
        values.append(value)
        if value >= P.lambda0:
            break
    return Trajectory(np.array(times), np.array(points), np.array(speeds), np.array(values), values[0])


def line_deviation(traj: Trajectory) -> float:
    """Max distance of the points to their best-fit line, over the arc length."""
    if len(traj) < 3:
        return 0.0
    length = polyline_length(traj.points)
    if length <= 0:
        raise DegenerateTrajectoryError("All trajectory points coincide")
    anchor, direction = fit_line(traj.points)
    return float(np.max(point_line_distances(traj.points, anchor, direction)) / length)


def _profile_fn(F: Profile) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(F, Curve):
        return F.at
    return F


def level_transport_check(traj: Trajectory, F: Profile, s0: Optional[float] = None,
                          samples: int = 4001) -> float:
    """
    max_t |V(x(t)) - I^-1(t)| with I(V) = int_{s0}^V ds / F(s).

    Raises:
        InvalidProfileError if F <= 0 on [s0, max level reached]
    """
    s0 = traj.s0 if s0 is None else s0
    top = float(traj.values.max())
    if top <= s0:
        return float(np.max(np.abs(traj.values - s0)))
    s = np.linspace(s0, top, samples)
    f = np.asarray(_profile_fn(F)(s), dtype=float)
    if np.any(f <= 0):
        raise InvalidProfileError(f"F <= 0 at s = {s[np.argmax(f <= 0)]:g}")
    elapsed = cumulative_trapezoid(1.0 / f, s, initial=0.0)
    level_at = PchipInterpolator(elapsed, s, extrapolate=True)
    return float(np.max(np.abs(traj.values - level_at(traj.times))))


def common_center_estimate(trajs: Sequence[Trajectory]) -> Tuple[np.ndarray, float]:
    """
    Least-squares intersection of the trajectories' fitted lines:
    sum (I - d d^T) p = sum (I - d d^T) c.

    Returns:
        (center, spread) with spread the RMS line-to-center distance
    """
    if not trajs:
        raise InsufficientDataError("No trajectories to intersect")
    n = trajs[0].points.shape[1]
    if len(trajs) < n:
        raise InsufficientDataError(f"Need >= {n} trajectories, got {len(trajs)}")
    lines = [fit_line(t.points) for t in trajs]
    M = np.zeros((n, n))
    b = np.zeros(n)
    for anchor, direction in lines:
        proj = np.eye(n) - np.outer(direction, direction)
        M += proj
        b += proj @ anchor
    condition = float(np.linalg.cond(M))
    if condition > CENTER_CONDITION_LIMIT:
        raise IllConditionedError(f"Fitted lines are nearly parallel (condition {condition:.3g})")
    center = np.linalg.solve(M, b)
    distances = np.array([point_line_distances(center, a, d)[0] for a, d in lines])
    return center, float(np.sqrt(np.mean(distances ** 2)))


def level_set_starts(P: AnalyticPotential, s0: float, count: int, iterations: int = 80) -> np.ndarray:
    """
    count points on {V = s0} by bisection along rays from the sublevel centroid,
    evenly spaced in angle (2-D) or on a Fibonacci sphere (n >= 3).
    """
    if count <= 0:
        return np.zeros((0, P.n))
    center = BoxQuadrature(P, QuadratureParams(cells_2d=100, cells_3d=32, cells_nd=12, refine=1)).centroid(s0)
    if P.values(center) >= s0:
        center = P.center.copy()
    directions = sphere_directions(count, P.n)
    lo_box, hi_box = P.box
    with np.errstate(divide="ignore"):
        to_hi = np.where(directions > 0, (hi_box - center) / directions, np.inf)
        to_lo = np.where(directions < 0, (lo_box - center) / directions, np.inf)
    r_hi = np.minimum(to_hi.min(axis=1), to_lo.min(axis=1))
    if np.any(P.values(center + r_hi[:, None] * directions) < s0):
        raise NumericalError(f"Level set V = {s0:g} reaches the box boundary")
    r_lo = np.zeros(count)
    for _ in range(iterations):
        mid = 0.5 * (r_lo + r_hi)
        above = P.values(center + mid[:, None] * directions) >= s0
        r_hi = np.where(above, mid, r_hi)
        r_lo = np.where(above, r_lo, mid)
    return center + (0.5 * (r_lo + r_hi))[:, None] * directions


@dataclass(frozen=True, eq=False)
class FlowlineCertificate:
    center: Optional[np.ndarray]
    spread: float
    max_line_deviation: float
    max_transport_deviation: float
    accepted: bool
    trajectories: Tuple[Trajectory, ...] = field(default_factory=tuple)

    def to_json(self) -> Dict[str, object]:
        return {
            "center": None if self.center is None else self.center.tolist(),
            "spread": self.spread,
            "max_line_deviation": self.max_line_deviation,
            "max_transport_deviation": self.max_transport_deviation,
            "accepted": self.accepted,
            "trajectories": len(self.trajectories),
        }


def flowline_certificate(P: AnalyticPotential, F: Profile, cfg: FlowlineConfig = FlowlineConfig()) -> FlowlineCertificate:
    """
    Flow cfg.count lines from {V = cfg.s0}; accept when every line is straight,
    the lines meet in one center and V is transported by F.
    """
    if cfg.count == 0:
        logger.warning("No flowlines requested; certificate is empty")
        return FlowlineCertificate(None, math.nan, math.nan, math.nan, False)

    starts = level_set_starts(P, cfg.s0, cfg.count)
    with ThreadPoolExecutor(max_workers=Config.WORKERS) as pool:
        trajs = list(pool.map(lambda x0: integrate_flowline(P, x0, cfg.t_end, cfg.dt), starts))

    deviations = [line_deviation(t) for t in trajs]
    transport = [level_transport_check(t, F, cfg.s0) for t in trajs]
    try:
        center, spread = common_center_estimate(trajs)
    except (IllConditionedError, InsufficientDataError) as e:
        logger.warning(f"No common center: {e}")
        center, spread = None, math.inf

    accepted = (
        center is not None
        and max(deviations) < cfg.line_tolerance
        and spread < cfg.spread_tolerance
        and max(transport) < cfg.transport_tolerance * P.lambda0
    )
    logger.info(f"Flowline certificate {'accepts' if accepted else 'rejects'}: "
                f"line deviation {max(deviations):.3g}, spread {spread:.3g}, transport {max(transport):.3g}")
    return FlowlineCertificate(center, spread, max(deviations), max(transport), accepted, tuple(trajs))


def write_trajectories(out_dir: Path, cert: FlowlineCertificate,
                       extra: Optional[Dict[str, object]] = None) -> List[Path]:
    """trajectory_<k>.csv (t, x_1..x_n, V) per flowline plus certificate.json."""
    out_dir = Path(out_dir)
    paths = []
    for k, traj in enumerate(cert.trajectories):
        n = traj.points.shape[1]
        header = ["t"] + [f"x_{i + 1}" for i in range(n)] + ["V"]
        rows = (
            [t, *point, v] for t, point, v in zip(traj.times, traj.points, traj.values)
        )
        paths.append(write_csv(out_dir / f"trajectory_{k}.csv", header, rows))
    paths.append(write_json(out_dir / "certificate.json", {**cert.to_json(), **(extra or {})}))
    return paths
