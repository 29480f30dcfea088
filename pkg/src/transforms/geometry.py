"""
Ball/sphere measures and line geometry, including the isoperimetric surface
and least-squares line fits.
"""

import math
from typing import Tuple

import numpy as np
from scipy.special import gamma


def unit_ball_volume(n: int) -> float:
    """
    Volume omega_n = pi^(n/2) / Gamma(n/2 + 1) of the unit ball in R^n.
    omega_2 = pi, omega_3 = 4 pi / 3.
    """
    return math.pi ** (n / 2) / float(gamma(n / 2 + 1))


def ball_radius(volume, n: int):
    """Radius of the ball with the given volume."""
    return (np.asarray(volume, dtype=float) / unit_ball_volume(n)) ** (1.0 / n)


def isoperimetric_area(volume, n: int):
    """
    Surface area of the ball of the given volume:
    S_iso = n * omega_n^(1/n) * volume^((n-1)/n).
    """
    volume = np.clip(np.asarray(volume, dtype=float), 0.0, None)
    return n * unit_ball_volume(n) ** (1.0 / n) * volume ** ((n - 1) / n)


def fit_line(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Best-fit line through a point cloud by its principal direction.

    Returns:
        (centroid, unit direction)
    """
    points = np.asarray(points, dtype=float)
    centroid = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - centroid, full_matrices=False)
    return centroid, vt[0]


def point_line_distances(points: np.ndarray, anchor: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """Euclidean distances from points to the line anchor + t*direction (direction unit)."""
    offsets = np.atleast_2d(points) - anchor
    along = offsets @ direction
    return np.linalg.norm(offsets - np.outer(along, direction), axis=1)


def polyline_length(points: np.ndarray) -> float:
    points = np.asarray(points, dtype=float)
    if len(points) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(points, axis=0), axis=1).sum())


def sphere_directions(count: int, n: int) -> np.ndarray:
    """
    Deterministic, roughly uniform unit vectors in R^n: evenly spaced angles
    for n = 2, a Fibonacci lattice for n = 3, and a Fibonacci lattice lifted
    by a fixed-angle rotation into the remaining coordinates for n > 3.
    """
    if count <= 0:
        return np.zeros((0, n))
    if n == 2:
        theta = 2 * math.pi * (np.arange(count) + 0.5) / count
        return np.column_stack([np.cos(theta), np.sin(theta)])
    k = np.arange(count) + 0.5
    z = 1 - 2 * k / count
    phi = math.pi * (1 + math.sqrt(5)) * k
    rho = np.sqrt(1 - z ** 2)
    base = np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])
    if n == 3:
        return base
    # Spread the remaining coordinates with golden-ratio phases.
    extra = np.column_stack([
        np.cos(2 * math.pi * ((j + 1) * 0.6180339887498949 * k % 1.0)) for j in range(n - 3)
    ])
    directions = np.hstack([base, 0.5 * extra])
    return directions / np.linalg.norm(directions, axis=1, keepdims=True)
