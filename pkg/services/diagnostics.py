"""Offline checks on instances and traces. Nothing here is consulted by the solver."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from services import barrier, geometry
from services.barrier import BarrierProblem
from services.bmfo import RunTrace, Schedule
from services.problem import BilevelInstance
from utils.errors import InvalidInput, InvalidParameter, MissingSecondOrderOracle
from utils.numerics import finite_difference_gradient, loglog_slope

__all__ = [
    "BiasReport",
    "TubeReport",
    "bias_report",
    "tube_report",
    "stationarity_series",
    "proxy_bias_curve",
    "loglog_slope",
    "finite_difference_gradient",
]

logger = logging.getLogger(__name__)

BOUND_SLACK = 1e-6


@dataclass(frozen=True)
class BiasRow:
    mu: float
    g_gap: float
    y_dist: float
    F_gap: float
    bound_g: float
    bound_y: float
    bound_F: float

    @property
    def within_bounds(self) -> bool:
        return (
            self.g_gap >= -1e-10
            and self.g_gap <= self.bound_g + BOUND_SLACK
            and self.y_dist <= self.bound_y + BOUND_SLACK
            and self.F_gap <= self.bound_F + BOUND_SLACK
        )


@dataclass(frozen=True)
class BiasReport:
    rows: List[BiasRow]
    slopes: dict
    l_f0: float
    passed: bool


def _sampled_grad_bound(instance: BilevelInstance, x, pairs) -> float:
    # max ||grad_y f|| along the segments that the mean-value bound runs over
    best = 0.0
    for a, b in pairs:
        for t in np.linspace(0.0, 1.0, 11):
            best = max(best, float(np.linalg.norm(instance.f_grad_y(x, (1 - t) * a + t * b))))
    return best


def bias_report(
    instance: BilevelInstance, x, mu_list: Sequence[float], mu_ref: float = 1e-10, tol: float = 1e-10
) -> BiasReport:
    """Gaps between the barrier centers and the reference solution, with their explicit bounds."""
    mu_list = sorted(float(m) for m in mu_list)[::-1]
    if not mu_list:
        raise InvalidParameter("mu_list is empty")
    if not mu_ref < mu_list[-1] / 100.0:
        raise InvalidParameter(f"mu_ref={mu_ref} must be below min(mu_list)/100")
    x = np.asarray(x, dtype=float)
    P = instance.polytope
    y_ref, F_ref = barrier.reference_constrained_solution(instance, x, mu_ref=mu_ref, tol=tol)
    g_ref = instance.g_value(x, y_ref)

    centers = []
    y = P.interior_witness
    for mu in mu_list:
        y = barrier.solve_exact_center(BarrierProblem(instance, mu), x, y_init=y, tol=tol).y_star
        centers.append(y)

    if instance.declared is not None:
        l_f0 = instance.declared.l_f0
    else:
        l_f0 = _sampled_grad_bound(instance, x, [(c, y_ref) for c in centers])

    rows = []
    for mu, y_mu in zip(mu_list, centers):
        bound_y = float(np.sqrt(2.0 * P.m * mu / instance.rho_g))
        rows.append(
            BiasRow(
                mu=mu,
                g_gap=float(instance.g_value(x, y_mu) - g_ref),
                y_dist=float(np.linalg.norm(y_mu - y_ref)),
                F_gap=float(abs(instance.f_value(x, y_mu) - F_ref)),
                bound_g=P.m * mu,
                bound_y=bound_y,
                bound_F=l_f0 * bound_y,
            )
        )

    slopes = {}
    mus = [r.mu for r in rows]
    for name in ("g_gap", "y_dist", "F_gap"):
        values = [getattr(r, name) for r in rows]
        slopes[name] = loglog_slope(mus, values) if len(rows) >= 2 and all(v > 0 for v in values) else None
    passed = all(r.within_bounds for r in rows)
    logger.info("bias report at %d mu values: %s", len(rows), "within bounds" if passed else "bound violated")
    return BiasReport(rows=rows, slopes=slopes, l_f0=l_f0, passed=passed)


@dataclass(frozen=True)
class TubeRow:
    k: int
    exact_err: float
    proxy_err: Optional[float] = None


@dataclass
class TubeReport:
    eta: float
    rows: List[TubeRow] = field(default_factory=list)

    @property
    def max_exact_err(self) -> float:
        return max((r.exact_err for r in self.rows), default=0.0)

    @property
    def max_proxy_err(self) -> Optional[float]:
        values = [r.proxy_err for r in self.rows if r.proxy_err is not None]
        return max(values) if values else None

    @property
    def first_exit_index(self) -> Optional[int]:
        for r in self.rows:
            if r.exact_err > self.eta or (r.proxy_err is not None and r.proxy_err > self.eta):
                return r.k
        return None


def anchored_error(P, point, center) -> float:
    """||point - center|| in the Dikin metric anchored at the center."""
    return geometry.dikin_norm(geometry.make_anchor(P, center), np.asarray(point) - np.asarray(center))


def tube_report(trace: RunTrace, bp: BarrierProblem, schedule: Schedule, stride: int = 1, tol: float = 1e-10) -> TubeReport:
    if stride < 1:
        raise InvalidParameter("stride must be >= 1")
    P = bp.polytope
    report = TubeReport(eta=schedule.eta)
    exact_center = proxy_center = None
    indices = list(range(0, len(trace.records), stride))
    if indices[-1] != len(trace.records) - 1:
        indices.append(len(trace.records) - 1)
    for i in indices:
        rec = trace.records[i]
        exact_center = barrier.solve_exact_center(bp, rec.x, y_init=exact_center if exact_center is not None else rec.z, tol=tol).y_star
        proxy_center = barrier.solve_proxy_center(
            bp, rec.lam, rec.x, y_init=proxy_center if proxy_center is not None else rec.y, tol=tol
        ).y_star
        report.rows.append(
            TubeRow(k=rec.k, exact_err=anchored_error(P, rec.z, exact_center), proxy_err=anchored_error(P, rec.y, proxy_center))
        )
    if report.first_exit_index is not None:
        logger.warning("tube exit at k=%d (eta=%g)", report.first_exit_index, report.eta)
    return report


@dataclass(frozen=True)
class StationarityRow:
    k: int
    grad_norm_sq: float
    running_min: float


def stationarity_series(trace: RunTrace, bp: BarrierProblem, stride: int = 1, tol: float = 1e-10) -> List[StationarityRow]:
    """||grad F_mu(x_k)||^2 per recorded k and its running minimum."""
    if not bp.instance.has_second_order:
        raise MissingSecondOrderOracle("stationarity_series needs g_hess_yy and g_hess_xy")
    rows = []
    best = np.inf
    y_warm = None
    for rec in trace.records[::stride]:
        y_warm = barrier.solve_exact_center(bp, rec.x, y_init=y_warm if y_warm is not None else rec.z, tol=tol).y_star
        grad = barrier.exact_hypergradient(bp, rec.x, tol=tol, y_init=y_warm)
        value = float(grad @ grad)
        best = min(best, value)
        rows.append(StationarityRow(k=rec.k, grad_norm_sq=value, running_min=best))
    return rows


@dataclass(frozen=True)
class ProxyBiasCurve:
    rows: List[tuple]
    slope: Optional[float]


def proxy_bias_curve(bp: BarrierProblem, x, lambda_list: Sequence[float], tol: float = 1e-10) -> ProxyBiasCurve:
    """||grad F_mu(x) - grad C*_lambda(x)|| per lambda, plus the fitted log-log slope."""
    if not bp.instance.has_second_order:
        raise MissingSecondOrderOracle("proxy_bias_curve needs second-order oracles")
    if len(lambda_list) == 0:
        raise InvalidInput("lambda_list is empty")
    x = np.asarray(x, dtype=float)
    exact = barrier.solve_exact_center(bp, x, tol=tol).y_star
    reference = barrier.exact_hypergradient(bp, x, tol=tol, y_init=exact)
    rows = []
    for lam in lambda_list:
        env = barrier.envelope_gradient(bp, float(lam), x, tol=tol, y_init=exact)
        rows.append((float(lam), float(np.linalg.norm(reference - env))))
    biases = [b for _, b in rows]
    slope = None
    if len(rows) >= 2 and all(b > 0 for b in biases):
        slope = loglog_slope([lam for lam, _ in rows], biases)
    return ProxyBiasCurve(rows=rows, slope=slope)
