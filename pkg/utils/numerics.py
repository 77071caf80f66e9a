from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from utils.errors import InvalidInput, InvalidParameter


def finite_difference_gradient(scalar_field: Callable[[np.ndarray], float], x, h: float = 1e-6) -> np.ndarray:
    """Central differences, one coordinate at a time."""
    if h <= 0:
        raise InvalidParameter(f"step h must be positive, got {h}")
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        grad.flat[i] = (scalar_field(x + e) - scalar_field(x - e)) / (2.0 * h)
    return grad


def finite_difference_jacobian(vector_field: Callable[[np.ndarray], np.ndarray], x, h: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian; column j is d field / d x_j."""
    x = np.asarray(x, dtype=float)
    columns = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        columns.append((np.asarray(vector_field(x + e)) - np.asarray(vector_field(x - e))) / (2.0 * h))
    return np.column_stack(columns)


def loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of log(ys) against log(xs)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.size < 2:
        raise InvalidInput("loglog_slope needs two equally sized series with at least 2 points")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise InvalidInput("loglog_slope needs strictly positive values")
    slope, _ = np.polyfit(np.log(xs), np.log(ys), 1)
    return float(slope)


def fraction_to_boundary(slack: np.ndarray, slack_decrease: np.ndarray, keep: float = 0.01) -> float:
    """Largest t in (0, 1] with slack - t * slack_decrease >= keep * slack."""
    growing = slack_decrease > 0
    if not np.any(growing):
        return 1.0
    limits = (1.0 - keep) * slack[growing] / slack_decrease[growing]
    return float(min(1.0, limits.min()))


def sample_ball(rng: np.random.Generator, dim: int, radius: float) -> np.ndarray:
    """Uniform sample from the closed Euclidean ball of the given radius."""
    if radius == 0.0 or dim == 0:
        return np.zeros(dim)
    direction = rng.standard_normal(dim)
    norm = np.linalg.norm(direction)
    while norm == 0.0:
        direction = rng.standard_normal(dim)
        norm = np.linalg.norm(direction)
    r = radius * rng.random() ** (1.0 / dim)
    return r * direction / norm


def close(a, b, rtol: float, atol: float = 0.0) -> bool:
    """Norm-based closeness: ||a - b|| <= rtol * ||b|| + atol."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b)) <= rtol * float(np.linalg.norm(b)) + atol
