"""Barrierized lower objective psi = g + mu*phi, the proxy L = f + lam*(psi - psi*),
their centers, and the verification oracles built on them.

Center solves here are high-accuracy oracles. The BMFO loop never calls them
except for the optional warm start.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.linalg

from services import geometry, newton
from services.newton import CenterSolution
from services.problem import BilevelInstance
from utils.errors import InvalidParameter, MissingSecondOrderOracle

logger = logging.getLogger(__name__)

ORACLE_TOL = 1e-10
ENVELOPE_TOL = 1e-8
MU_LADDER_START = 1e-2


@dataclass(frozen=True)
class BarrierProblem:
    instance: BilevelInstance
    mu: float

    def __post_init__(self):
        if not self.mu > 0:
            raise InvalidParameter(f"barrier parameter mu must be positive, got {self.mu}")

    @property
    def polytope(self):
        return self.instance.polytope


def psi_value(bp: BarrierProblem, x, y) -> float:
    return bp.instance.g_value(x, y) + bp.mu * geometry.barrier_value(bp.polytope, y)


def psi_grad_y(bp: BarrierProblem, x, y) -> np.ndarray:
    return bp.instance.g_grad_y(x, y) + bp.mu * geometry.barrier_gradient(bp.polytope, y)


def psi_grad_x(bp: BarrierProblem, x, y) -> np.ndarray:
    geometry.interior_slacks(bp.polytope, y)
    return bp.instance.g_grad_x(x, y)


def psi_hess_yy(bp: BarrierProblem, x, y) -> np.ndarray:
    if bp.instance.g_hess_yy is None:
        raise MissingSecondOrderOracle(f"{bp.instance.name} has no g_hess_yy oracle")
    return bp.instance.g_hess_yy(x, y) + bp.mu * geometry.barrier_hessian(bp.polytope, y)


def _curvature_hint(instance: BilevelInstance) -> float:
    return instance.declared.l_g1 if instance.declared is not None else 1.0


def solve_exact_center(bp: BarrierProblem, x, y_init=None, tol: float = ORACLE_TOL) -> CenterSolution:
    """argmin_y psi(x, y) over int(Y)."""
    x = np.asarray(x, dtype=float)
    y0 = bp.polytope.interior_witness if y_init is None else y_init
    if bp.instance.g_hess_yy is not None:
        return newton.damped_newton(
            bp.polytope,
            value=lambda y: psi_value(bp, x, y),
            gradient=lambda y: psi_grad_y(bp, x, y),
            hessian=lambda y: psi_hess_yy(bp, x, y),
            y0=y0,
            tol=tol,
            label="exact center",
        )
    logger.debug("no g_hess_yy on %s: falling back to barrier-metric descent", bp.instance.name)
    return newton.barrier_metric_descent(
        bp.polytope,
        value=lambda y: psi_value(bp, x, y),
        gradient=lambda y: psi_grad_y(bp, x, y),
        mu=bp.mu,
        y0=y0,
        tol=tol,
        curvature=_curvature_hint(bp.instance),
        label="exact center",
    )


def psi_star_value(bp: BarrierProblem, x, tol: float = ORACLE_TOL, y_init=None) -> float:
    center = solve_exact_center(bp, x, y_init=y_init, tol=tol)
    return psi_value(bp, x, center.y_star)


def proxy_value(bp: BarrierProblem, lam: float, x, y, psi_star: float) -> float:
    return bp.instance.f_value(x, y) + lam * (psi_value(bp, x, y) - psi_star)


def proxy_grad_y(bp: BarrierProblem, lam: float, x, y) -> np.ndarray:
    return bp.instance.f_grad_y(x, y) + lam * psi_grad_y(bp, x, y)


def solve_proxy_center(bp: BarrierProblem, lam: float, x, y_init=None, tol: float = ORACLE_TOL) -> CenterSolution:
    """argmin_y f(x, y) + lam * psi(x, y).

    The residual target is tol * max(1, lam): the proxy gradient carries a
    factor lam, while the accuracy that matters is the one of the minimizer.
    """
    x = np.asarray(x, dtype=float)
    y0 = bp.polytope.interior_witness if y_init is None else y_init
    scaled_tol = tol * max(1.0, lam)
    value = lambda y: bp.instance.f_value(x, y) + lam * psi_value(bp, x, y)
    gradient = lambda y: proxy_grad_y(bp, lam, x, y)
    if bp.instance.g_hess_yy is not None and bp.instance.f_hess_yy is not None:
        return newton.damped_newton(
            bp.polytope,
            value=value,
            gradient=gradient,
            hessian=lambda y: bp.instance.f_hess_yy(x, y) + lam * psi_hess_yy(bp, x, y),
            y0=y0,
            tol=scaled_tol,
            label="proxy center",
        )
    return newton.barrier_metric_descent(
        bp.polytope,
        value=value,
        gradient=gradient,
        mu=lam * bp.mu,
        y0=y0,
        tol=scaled_tol,
        curvature=max(1.0, lam) * _curvature_hint(bp.instance),
        label="proxy center",
    )


def exact_hypergradient(bp: BarrierProblem, x, tol: float = ORACLE_TOL, y_init=None) -> np.ndarray:
    """grad F_mu(x) = grad_x f - J^T (hess_yy psi)^-1 grad_y f at y_mu*(x), J = d(grad_y g)/dx."""
    if not bp.instance.has_second_order:
        raise MissingSecondOrderOracle(f"{bp.instance.name} lacks g_hess_yy/g_hess_xy")
    x = np.asarray(x, dtype=float)
    y = solve_exact_center(bp, x, y_init=y_init, tol=tol).y_star
    H = psi_hess_yy(bp, x, y)
    J = np.atleast_2d(bp.instance.g_hess_xy(x, y)).reshape(bp.instance.dim_y, bp.instance.dim_x)
    v = scipy.linalg.solve(H, bp.instance.f_grad_y(x, y), assume_a="pos")
    return bp.instance.f_grad_x(x, y) - J.T @ v


def smoothed_outer_value(bp: BarrierProblem, x, tol: float = ORACLE_TOL, y_init=None) -> float:
    """F_mu(x) = f(x, y_mu*(x))."""
    y = solve_exact_center(bp, x, y_init=y_init, tol=tol).y_star
    return bp.instance.f_value(np.asarray(x, dtype=float), y)


def envelope_gradient(bp: BarrierProblem, lam: float, x, tol: float = ENVELOPE_TOL, y_init=None) -> np.ndarray:
    """grad of C*(x) = min_y L(x, y): grad_x f(y_lam) + lam (grad_x g(y_lam) - grad_x g(y*))."""
    x = np.asarray(x, dtype=float)
    y_exact = solve_exact_center(bp, x, y_init=y_init, tol=tol).y_star
    y_proxy = solve_proxy_center(bp, lam, x, y_init=y_exact, tol=tol).y_star
    inst = bp.instance
    return inst.f_grad_x(x, y_proxy) + lam * (inst.g_grad_x(x, y_proxy) - inst.g_grad_x(x, y_exact))


def proxy_min_value(bp: BarrierProblem, lam: float, x, tol: float = ORACLE_TOL) -> float:
    """C*(x) = min_y L(x, y), the function whose gradient envelope_gradient returns."""
    x = np.asarray(x, dtype=float)
    exact = solve_exact_center(bp, x, tol=tol)
    psi_star = psi_value(bp, x, exact.y_star)
    proxy = solve_proxy_center(bp, lam, x, y_init=exact.y_star, tol=tol)
    return proxy_value(bp, lam, x, proxy.y_star, psi_star)


def mu_ladder(mu_ref: float, start: float = MU_LADDER_START) -> list[float]:
    """start * 10^-j down to mu_ref, always ending exactly at mu_ref."""
    ladder = []
    mu = start
    while mu > mu_ref * (1.0 + 1e-9):
        ladder.append(mu)
        mu *= 0.1
    ladder.append(mu_ref)
    return ladder


def reference_constrained_solution(
    instance: BilevelInstance, x, mu_ref: float = 1e-10, tol: float = ORACLE_TOL, y_init=None
) -> Tuple[np.ndarray, float]:
    """Approximates y*(x) of the constrained lower problem by following the barrier path."""
    x = np.asarray(x, dtype=float)
    y = instance.polytope.interior_witness if y_init is None else np.asarray(y_init, dtype=float)
    for mu in mu_ladder(mu_ref):
        y = solve_exact_center(BarrierProblem(instance, mu), x, y_init=y, tol=tol).y_star
    return y, float(instance.f_value(x, y))


def warm_start_centers(
    bp: BarrierProblem, lam: float, x, tol: float, y_init: Optional[np.ndarray] = None
) -> Tuple[CenterSolution, CenterSolution]:
    exact = solve_exact_center(bp, x, y_init=y_init, tol=tol)
    proxy = solve_proxy_center(bp, lam, x, y_init=exact.y_star, tol=tol)
    return exact, proxy
