"""Interior damped Newton for barrier-augmented objectives over a polytope.

Every objective handled here has the form h(y) + scale * mu * phi(y) and is
minimized over int(Y). Stationarity is measured as the Dikin dual norm of
the full gradient at the current iterate.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

from services import geometry
from services.geometry import Polytope
from utils.errors import ConvergenceFailure, NonConvexityDetected, NonInterior
from utils.numerics import fraction_to_boundary

logger = logging.getLogger(__name__)

BOUNDARY_KEEP = 0.01
ARMIJO_C = 1e-4
TINY_DECREMENT = 1e-12


@dataclass(frozen=True)
class CenterSolution:
    y_star: np.ndarray
    stationarity_residual: float
    iterations: int


def _stationarity(P: Polytope, y: np.ndarray, grad: np.ndarray) -> float:
    return geometry.dikin_dual_norm(geometry.make_anchor(P, y), grad)


def damped_newton(
    P: Polytope,
    value: Callable[[np.ndarray], float],
    gradient: Callable[[np.ndarray], np.ndarray],
    hessian: Callable[[np.ndarray], np.ndarray],
    y0,
    tol: float,
    max_iter: int = 200,
    label: str = "center",
) -> CenterSolution:
    """Newton with fraction-to-boundary damping and Armijo backtracking.

    Raises NonConvexityDetected when the Hessian cannot be Cholesky factored.
    """
    y = np.array(y0, dtype=float)
    if not geometry.is_strict_interior(P, y):
        raise NonInterior(f"{label}: starting point is not strictly interior", float(geometry.slacks(P, y).min()))

    for it in range(max_iter + 1):
        g = gradient(y)
        residual = _stationarity(P, y, g)
        if residual <= tol:
            return _polish(P, value, gradient, hessian, y, residual, it, tol)
        if it == max_iter:
            break
        step = _newton_step(hessian(y), g, label)
        y = _damped_update(P, value, y, g, step)
        logger.debug("%s newton it=%d residual=%.3e", label, it, residual)

    raise ConvergenceFailure(f"{label}: damped Newton did not converge", iterations=max_iter, residual=residual)


def _newton_step(H: np.ndarray, g: np.ndarray, label: str) -> np.ndarray:
    diag = np.diag(H)
    if not np.all(diag > 0):
        raise NonConvexityDetected(f"{label}: Hessian has a nonpositive diagonal entry")
    # symmetric diagonal scaling; barrier terms near the boundary dominate the diagonal
    scale = 1.0 / np.sqrt(diag)
    try:
        factor = scipy.linalg.cho_factor(H * scale[:, None] * scale[None, :], lower=True)
    except np.linalg.LinAlgError as exc:
        raise NonConvexityDetected(f"{label}: Hessian is not positive definite") from exc
    return -scale * scipy.linalg.cho_solve(factor, scale * g)


def _damped_update(P, value, y, g, step) -> np.ndarray:
    s = geometry.slacks(P, y)
    t = fraction_to_boundary(s, P.A @ step, keep=BOUNDARY_KEEP)
    slope = float(g @ step)
    f0 = value(y)
    # below this decrement the value change is lost in rounding
    if -slope > TINY_DECREMENT * (1.0 + abs(f0)):
        while t > 1e-16 and value(y + t * step) > f0 + ARMIJO_C * t * slope:
            t *= 0.5
    return y + t * step


def _polish(P, value, gradient, hessian, y, residual, iterations, tol) -> CenterSolution:
    # one extra Newton step once inside the tolerance; kept only if it helps
    try:
        g = gradient(y)
        step = _newton_step(hessian(y), g, "polish")
        t = fraction_to_boundary(geometry.slacks(P, y), P.A @ step, keep=BOUNDARY_KEEP)
        candidate = y + t * step
        cand_residual = _stationarity(P, candidate, gradient(candidate))
    except (NonConvexityDetected, NonInterior):
        cand_residual = np.inf
    if cand_residual < residual:
        y, residual = candidate, cand_residual
    return CenterSolution(y_star=y, stationarity_residual=float(residual), iterations=iterations)


def barrier_metric_descent(
    P: Polytope,
    value: Callable[[np.ndarray], float],
    gradient: Callable[[np.ndarray], np.ndarray],
    mu: float,
    y0,
    tol: float,
    curvature: float = 1.0,
    max_iter: int = 20000,
    label: str = "center",
) -> CenterSolution:
    """First-order fallback: steps along -(c I + mu H_phi(y))^-1 grad with backtracking."""
    y = np.array(y0, dtype=float)
    if not geometry.is_strict_interior(P, y):
        raise NonInterior(f"{label}: starting point is not strictly interior", float(geometry.slacks(P, y).min()))
    eye = np.eye(P.d)
    t_prev = 1.0
    for it in range(max_iter + 1):
        g = gradient(y)
        residual = _stationarity(P, y, g)
        if residual <= tol:
            return CenterSolution(y_star=y, stationarity_residual=float(residual), iterations=it)
        if it == max_iter:
            break
        metric = curvature * eye + mu * geometry.barrier_hessian(P, y)
        step = -scipy.linalg.solve(metric, g, assume_a="pos")
        s = geometry.slacks(P, y)
        t = min(2.0 * t_prev, fraction_to_boundary(s, P.A @ step, keep=BOUNDARY_KEEP))
        f0 = value(y)
        slope = float(g @ step)
        if -slope > TINY_DECREMENT * (1.0 + abs(f0)):
            while t > 1e-16 and value(y + t * step) > f0 + ARMIJO_C * t * slope:
                t *= 0.5
        else:
            # values no longer resolve the decrease; backtrack on the residual instead
            while t > 1e-16 and _stationarity(P, y + t * step, gradient(y + t * step)) >= residual:
                t *= 0.5
        y = y + t * step
        t_prev = max(t, 1e-12)
    raise ConvergenceFailure(f"{label}: barrier-metric descent did not converge", iterations=max_iter, residual=residual)


def analytic_center(P: Polytope, tol: float = 1e-10, max_iter: int = 200) -> np.ndarray:
    """Minimizer of phi over int(Y), started from the interior witness."""
    solution = analytic_center_solution(P, tol=tol, max_iter=max_iter)
    logger.debug("analytic center after %d iterations, residual %.2e", solution.iterations, solution.stationarity_residual)
    return solution.y_star


def analytic_center_solution(P: Polytope, tol: float = 1e-10, max_iter: int = 200) -> CenterSolution:
    return damped_newton(
        P,
        value=lambda y: geometry.barrier_value(P, y),
        gradient=lambda y: geometry.barrier_gradient(P, y),
        hessian=lambda y: geometry.barrier_hessian(P, y),
        y0=P.interior_witness,
        tol=tol,
        max_iter=max_iter,
        label="analytic center",
    )
