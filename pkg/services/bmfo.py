"""Barrier-Metric First-Order method.

Each outer iteration runs two frozen-anchor inner trackers,

    z <- z - gamma_k H(z_k)^-1 grad_y psi(x_k, z)            (exact tracker)
    y <- y - alpha_k H(y_k)^-1 (grad_y f + lam_k grad_y psi)  (proxy tracker)

then moves x along q = grad_x f(x, y) + lam_k (grad_x g(x, y) - grad_x g(x, z)).
Only first-order oracles of f and g are touched.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from models.reports import CertificationReport, ConditionResult
from services import barrier, geometry
from services.barrier import BarrierProblem
from services.problem import BilevelInstance, DeclaredConstants
from utils.errors import InvalidParameter
from utils.numerics import fraction_to_boundary

logger = logging.getLogger(__name__)

SCHEDULE_KINDS = ("deterministic_polynomial", "stochastic_polynomial", "explicit")
GUARD_KEEP = 0.01

# (alpha exponent, gamma exponent, lambda exponent) of the polynomial profiles
_PROFILES = {
    "deterministic_polynomial": (1.0 / 3.0, 0.0, 1.0 / 3.0),
    "stochastic_polynomial": (3.0 / 5.0, 2.0 / 5.0, 1.0 / 5.0),
}


# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Schedule:
    kind: str
    alpha0: float
    gamma0: float
    lambda0: float
    k0: float
    xi: float
    T: int
    eta: float
    mu: float
    alphas: Optional[Tuple[float, ...]] = None
    gammas: Optional[Tuple[float, ...]] = None
    lambdas: Optional[Tuple[float, ...]] = None


class ScheduleValues(NamedTuple):
    alpha: float
    gamma: float
    lam: float
    delta: float

    @property
    def beta(self) -> float:
        return self.alpha * self.lam


def make_schedule(
    kind: str,
    alpha0: float = 0.0,
    gamma0: float = 0.0,
    lambda0: float = 0.0,
    k0: float = 1.0,
    xi: float = 1.0,
    T: int = 1,
    eta: float = 0.25,
    mu: float = 1e-3,
    alphas: Optional[Sequence[float]] = None,
    gammas: Optional[Sequence[float]] = None,
    lambdas: Optional[Sequence[float]] = None,
) -> Schedule:
    if kind not in SCHEDULE_KINDS:
        raise InvalidParameter(f"unknown schedule kind {kind!r}; expected one of {SCHEDULE_KINDS}")
    if not (isinstance(T, (int, np.integer)) and T >= 1):
        raise InvalidParameter(f"T must be an integer >= 1, got {T!r}")
    if not 0.0 < eta < 0.5:
        raise InvalidParameter(f"eta must lie in (0, 1/2), got {eta}")
    if not mu > 0:
        raise InvalidParameter(f"mu must be positive, got {mu}")
    # xi = 0 freezes x and is allowed for tracker experiments
    if not xi >= 0:
        raise InvalidParameter(f"xi must be nonnegative, got {xi}")

    if kind == "explicit":
        if alphas is None or gammas is None or lambdas is None:
            raise InvalidParameter("explicit schedules need alphas, gammas and lambdas")
        seqs = [tuple(float(v) for v in s) for s in (alphas, gammas, lambdas)]
        if any(len(s) == 0 for s in seqs):
            raise InvalidParameter("explicit sequences must be non-empty")
        if any(v < 0 for s in seqs for v in s):
            raise InvalidParameter("explicit sequences must be nonnegative")
        if any(b < a for a, b in zip(seqs[2], seqs[2][1:])):
            raise InvalidParameter("lambdas must be nondecreasing")
        return Schedule(
            kind=kind, alpha0=seqs[0][0], gamma0=seqs[1][0], lambda0=seqs[2][0], k0=1.0,
            xi=float(xi), T=int(T), eta=float(eta), mu=float(mu),
            alphas=seqs[0], gammas=seqs[1], lambdas=seqs[2],
        )

    for name, value in (("alpha0", alpha0), ("gamma0", gamma0), ("lambda0", lambda0), ("k0", k0)):
        if not value > 0:
            raise InvalidParameter(f"{name} must be positive, got {value}")
    return Schedule(
        kind=kind, alpha0=float(alpha0), gamma0=float(gamma0), lambda0=float(lambda0), k0=float(k0),
        xi=float(xi), T=int(T), eta=float(eta), mu=float(mu),
    )


def _lambda_at(schedule: Schedule, k: int) -> float:
    if schedule.kind == "explicit":
        return schedule.lambdas[min(k, len(schedule.lambdas) - 1)]
    p_lam = _PROFILES[schedule.kind][2]
    return schedule.lambda0 * ((k + schedule.k0) / schedule.k0) ** p_lam


def schedule_at(schedule: Schedule, k: int) -> ScheduleValues:
    """(alpha_k, gamma_k, lambda_k, delta_k) with delta_k = lambda_{k+1} - lambda_k.

    Explicit sequences shorter than k repeat their last entry.
    """
    if k < 0:
        raise InvalidParameter("k must be nonnegative")
    if schedule.kind == "explicit":
        alpha = schedule.alphas[min(k, len(schedule.alphas) - 1)]
        gamma = schedule.gammas[min(k, len(schedule.gammas) - 1)]
    else:
        p_alpha, p_gamma, _ = _PROFILES[schedule.kind]
        base = k + schedule.k0
        alpha = schedule.alpha0 / base**p_alpha
        gamma = schedule.gamma0 / base**p_gamma
    lam = _lambda_at(schedule, k)
    return ScheduleValues(alpha=alpha, gamma=gamma, lam=lam, delta=_lambda_at(schedule, k + 1) - lam)


# ---------------------------------------------------------------------------
# Local constants and certification
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class LocalConstants:
    rho_psi: float
    l_psi1: float
    l_psi2: float
    l_f0: float
    l_f1: float
    l_g0: float
    l_g1: float
    l_f0_eta: float
    l_f1_eta: float
    l_f2_eta: float
    L_F: float
    c_x: float
    l_star0: float
    l_lambda0: float
    l_star1: float
    c_xi: float = 0.01
    conservative_defaults: Tuple[str, ...] = ()

    def __post_init__(self):
        for name in (
            "rho_psi", "l_psi1", "l_psi2", "l_f0", "l_f1", "l_g0", "l_g1", "l_f0_eta", "l_f1_eta",
            "l_f2_eta", "L_F", "c_x", "l_star0", "l_lambda0", "l_star1", "c_xi",
        ):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise InvalidParameter(f"local constant {name} must be positive and finite, got {value}")
        if self.rho_psi > self.l_psi1:
            raise InvalidParameter("rho_psi cannot exceed l_psi1")


def default_local_constants(
    mu: float,
    eta: float,
    declared: DeclaredConstants,
    kappa: float,
    l_psi2: Optional[float] = None,
    l_f2_eta: Optional[float] = None,
    l_star1: Optional[float] = None,
    c_xi: float = 0.01,
) -> LocalConstants:
    """Closed-form constants of the barrier-aware analysis.

    Entries without a closed form default to l_psi2 = 10 l_psi1,
    l_f2_eta = 10 l_f1_eta and l_star1 = max(1, l_lambda0).
    """
    if not 0.0 < eta < 0.5:
        raise InvalidParameter(f"eta must lie in (0, 1/2), got {eta}")
    if not kappa >= 1.0:
        raise InvalidParameter(f"kappa must be >= 1, got {kappa}")
    if not mu > 0:
        raise InvalidParameter(f"mu must be positive, got {mu}")
    shrink = (1.0 - 2.0 * eta) ** 2
    rho = mu * shrink
    l_psi1 = kappa**2 * declared.l_g1 + mu / shrink
    l_f0_eta = kappa * declared.l_f0
    l_f1_eta = kappa**2 * declared.l_f1
    l_lambda0 = 3.0 * l_psi1 / rho
    l_star0 = 1.0 + 3.0 * l_psi1 / rho

    defaults = []
    if l_psi2 is None:
        l_psi2 = 10.0 * l_psi1
        defaults.append("l_psi2")
    if l_f2_eta is None:
        l_f2_eta = 10.0 * l_f1_eta
        defaults.append("l_f2_eta")
    if l_star1 is None:
        l_star1 = max(1.0, l_lambda0)
        defaults.append("l_star1")

    L_F = (declared.l_f1 + l_psi1 * l_f1_eta / rho + 2.0 * l_psi1 * l_psi2 * l_f0_eta / rho**2) * l_star0
    c_x = 2.0 * l_psi1 * l_f0_eta / rho**2 * (l_f1_eta + l_psi2 * l_f0_eta / rho)
    return LocalConstants(
        rho_psi=rho, l_psi1=l_psi1, l_psi2=l_psi2,
        l_f0=declared.l_f0, l_f1=declared.l_f1, l_g0=declared.l_g0, l_g1=declared.l_g1,
        l_f0_eta=l_f0_eta, l_f1_eta=l_f1_eta, l_f2_eta=l_f2_eta,
        L_F=L_F, c_x=c_x, l_star0=l_star0, l_lambda0=l_lambda0, l_star1=l_star1,
        c_xi=c_xi, conservative_defaults=tuple(defaults),
    )


def lambda0_lower_bound(c: LocalConstants, eta: float) -> float:
    return max(2.0 * c.l_f1_eta / c.rho_psi, 8.0 * c.l_f0_eta / (eta * c.rho_psi))


def gamma_cap(c: LocalConstants, T: int) -> float:
    return min(1.0 / (4.0 * c.l_psi1), 1.0 / (4.0 * T * c.rho_psi))


def xi_over_T_bound(c: LocalConstants, eta: float, lambda0: float) -> float:
    drift = c.l_f0 / lambda0 + 2.0 * c.l_g0
    switch = max(c.l_psi1 * c.l_star0**2, c.l_star1 * max(c.l_g0, c.l_f0))
    return min(
        eta * c.rho_psi / (16.0 * c.l_star0 * drift),
        eta * c.rho_psi / (64.0 * c.l_lambda0 * drift),
        c.c_xi * c.rho_psi / switch,
    )


def _ratio(lhs: float, rhs: float) -> float:
    if lhs <= 0.0:
        return math.inf
    return rhs / lhs


class _Tally:
    """Tracks min margin and first violation of one per-k inequality."""

    def __init__(self):
        self.margin = math.inf
        self.first: Optional[int] = None

    def add(self, k: int, lhs: float, rhs: float):
        self.margin = min(self.margin, _ratio(lhs, rhs))
        if lhs > rhs and self.first is None:
            self.first = k


def certify_barrier_aware(schedule: Schedule, constants: LocalConstants, K: int) -> CertificationReport:
    c = constants
    eta, T, xi = schedule.eta, schedule.T, schedule.xi
    lam0 = schedule_at(schedule, 0).lam
    cap = gamma_cap(c, T)
    alpha_cap = math.inf if xi == 0 else 1.0 / (2.0 * xi * c.L_F)

    beta_gamma, gamma_t, alpha_t, growth = _Tally(), _Tally(), _Tally(), _Tally()
    for k in range(K):
        v = schedule_at(schedule, k)
        beta_gamma.add(k, v.beta, v.gamma)
        gamma_t.add(k, v.gamma, cap)
        alpha_t.add(k, v.alpha, alpha_cap)
        if v.delta == 0.0:
            relative_growth = 0.0
        else:
            relative_growth = v.delta / v.lam if v.lam > 0 else math.inf
        growth.add(k, relative_growth, T * c.rho_psi * v.beta / 16.0)

    lam_bound = lambda0_lower_bound(c, eta)
    xi_bound = xi_over_T_bound(c, eta, lam0)
    results = [
        ConditionResult(
            name="S1:lambda0",
            condition="lambda_0 >= max{2 l_f1_eta/rho_psi, 8 l_f0_eta/(eta rho_psi)}",
            passed=lam0 >= lam_bound,
            first_violation=None if lam0 >= lam_bound else 0,
            margin=_ratio(lam_bound, lam0),
        ),
        _tally_result("S1:beta<=gamma", "beta_k = alpha_k lambda_k <= gamma_k", beta_gamma),
        _tally_result("S1:gamma-cap", "gamma_k <= min{1/(4 l_psi1), 1/(4 T rho_psi)}", gamma_t),
        _tally_result("S1:alpha-cap", "alpha_k <= 1/(2 xi L_F)", alpha_t),
        _tally_result("S2", "delta_k/lambda_k <= T rho_psi beta_k / 16", growth),
        ConditionResult(
            name="S3",
            condition="xi/T <= min{three tube-closure terms}",
            passed=xi / T <= xi_bound,
            first_violation=None if xi / T <= xi_bound else 0,
            margin=_ratio(xi / T, xi_bound),
            conditional=True,
        ),
    ]
    report = CertificationReport(
        K=K,
        passed=all(r.passed for r in results),
        conditions=results,
        c_xi=c.c_xi,
        conservative_defaults=list(c.conservative_defaults),
    )
    logger.info("certification over k < %d: %s", K, "passed" if report.passed else "failed")
    return report


def _tally_result(name: str, text: str, tally: _Tally) -> ConditionResult:
    return ConditionResult(
        name=name, condition=text, passed=tally.first is None, first_violation=tally.first, margin=tally.margin
    )


def certified_schedule(
    constants: LocalConstants, kind: str, T: int, eta: float, mu: float, safety: float = 2.0
) -> Schedule:
    """Polynomial-profile schedule meeting every barrier-aware inequality by a factor `safety`."""
    if kind not in _PROFILES:
        raise InvalidParameter(f"certified schedules use a polynomial profile, got {kind!r}")
    if not safety > 1.0:
        raise InvalidParameter("safety must exceed 1")
    c = constants
    p_alpha, p_gamma, p_lam = _PROFILES[kind]
    lambda0 = safety * lambda0_lower_bound(c, eta)
    gamma_start = gamma_cap(c, T) / safety
    beta_start = gamma_start / safety
    # delta_0/lambda_0 = (1 + 1/k0)^p - 1 <= p/k0, and the ratio to beta_k only improves with k
    k0 = float(math.ceil(safety * 16.0 * p_lam / (T * c.rho_psi * beta_start)))
    gamma0 = gamma_start * k0**p_gamma
    alpha0 = beta_start * k0**p_alpha / lambda0
    alpha_start = alpha0 / k0**p_alpha
    xi = min(T * xi_over_T_bound(c, eta, lambda0), 1.0 / (2.0 * alpha_start * c.L_F)) / safety
    return make_schedule(kind, alpha0=alpha0, gamma0=gamma0, lambda0=lambda0, k0=k0, xi=xi, T=T, eta=eta, mu=mu)


# ---------------------------------------------------------------------------
# Algorithm
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class SolverState:
    k: int
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    lam: float


@dataclass(frozen=True)
class InnerResult:
    point: np.ndarray
    guard_activations: int


@dataclass(frozen=True)
class ProjectionBox:
    lower: float
    upper: float

    def apply(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)


@dataclass(frozen=True)
class TraceRecord:
    """State after k outer iterations; step fields describe iteration k-1 (None for k = 0)."""

    k: int
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    lam: float
    alpha: Optional[float] = None
    gamma: Optional[float] = None
    q_norm: Optional[float] = None
    guard_exact: Optional[int] = None
    guard_proxy: Optional[int] = None

    @property
    def state(self) -> SolverState:
        return SolverState(k=self.k, x=self.x, y=self.y, z=self.z, lam=self.lam)


@dataclass
class RunTrace:
    records: List[TraceRecord] = field(default_factory=list)
    projection: Optional[ProjectionBox] = None
    budget_exhausted: bool = False

    @property
    def K(self) -> int:
        return len(self.records) - 1

    @property
    def final(self) -> TraceRecord:
        return self.records[-1]

    @property
    def guard_activations(self) -> int:
        return sum((r.guard_exact or 0) + (r.guard_proxy or 0) for r in self.records)


def _guarded_loop(P, anchor, point, T, direction) -> InnerResult:
    guards = 0
    for _ in range(T):
        step = -anchor.solve(direction(point))
        t = fraction_to_boundary(geometry.slacks(P, point), P.A @ step, keep=GUARD_KEEP)
        if t < 1.0:
            guards += 1
        point = point + t * step
    return InnerResult(point=point, guard_activations=guards)


def frozen_inner_loop_exact(bp: BarrierProblem, x, z_start, gamma: float, T: int) -> InnerResult:
    """T steps of z - gamma H(z_start)^-1 grad_y psi(x, z) with the anchor frozen at z_start."""
    x = np.asarray(x, dtype=float)
    anchor = geometry.make_anchor(bp.polytope, z_start)
    start = np.array(z_start, dtype=float)
    if gamma == 0.0:
        return InnerResult(point=start, guard_activations=0)
    return _guarded_loop(bp.polytope, anchor, start, T, lambda z: gamma * barrier.psi_grad_y(bp, x, z))


def frozen_inner_loop_proxy(bp: BarrierProblem, lam: float, x, y_start, alpha: float, T: int, f_grad_source=None) -> InnerResult:
    """T steps of y - alpha H(y_start)^-1 (grad_y f + lam grad_y psi) with the anchor frozen at y_start."""
    source = bp.instance if f_grad_source is None else f_grad_source
    x = np.asarray(x, dtype=float)
    anchor = geometry.make_anchor(bp.polytope, y_start)
    start = np.array(y_start, dtype=float)
    if alpha == 0.0:
        return InnerResult(point=start, guard_activations=0)
    return _guarded_loop(
        bp.polytope, anchor, start, T,
        lambda y: alpha * (source.f_grad_y(x, y) + lam * barrier.psi_grad_y(bp, x, y)),
    )


def proxy_direction(instance: BilevelInstance, lam: float, x, y, z, f_grad_source=None) -> np.ndarray:
    source = instance if f_grad_source is None else f_grad_source
    q = source.f_grad_x(x, y)
    if lam == 0.0:
        return q
    return q + lam * (instance.g_grad_x(x, y) - instance.g_grad_x(x, z))


def _outer_step(bp, schedule, state: SolverState, f_grad_source, projection) -> TraceRecord:
    v = schedule_at(schedule, state.k)
    exact = frozen_inner_loop_exact(bp, state.x, state.z, v.gamma, schedule.T)
    proxy = frozen_inner_loop_proxy(bp, state.lam, state.x, state.y, v.alpha, schedule.T, f_grad_source)
    q = proxy_direction(bp.instance, state.lam, state.x, proxy.point, exact.point, f_grad_source)
    x_next = state.x - schedule.xi * v.alpha * q
    if projection is not None:
        x_next = projection.apply(x_next)
    return TraceRecord(
        k=state.k + 1,
        x=x_next,
        y=proxy.point,
        z=exact.point,
        lam=state.lam + v.delta,
        alpha=v.alpha,
        gamma=v.gamma,
        q_norm=float(np.linalg.norm(q)),
        guard_exact=exact.guard_activations,
        guard_proxy=proxy.guard_activations,
    )


def outer_iteration(
    bp: BarrierProblem, schedule: Schedule, state: SolverState, f_grad_source=None, projection: Optional[ProjectionBox] = None
) -> SolverState:
    return _outer_step(bp, schedule, state, f_grad_source, projection).state


def run(
    bp: BarrierProblem,
    schedule: Schedule,
    x0,
    y0=None,
    z0=None,
    K: int = 1,
    f_grad_source=None,
    projection: Optional[ProjectionBox] = None,
    budget_s: Optional[float] = None,
) -> RunTrace:
    """K outer iterations from (x0, y0, z0); missing warm starts are solved at x0 to tol eta/2.

    With budget_s set, the loop stops before the first iteration that would start
    after budget_s seconds (warm start included) and flags the trace.
    """
    started = time.monotonic()
    if K < 0:
        raise InvalidParameter("K must be nonnegative")
    x0 = np.array(x0, dtype=float).reshape(-1)
    if x0.size != bp.instance.dim_x:
        raise InvalidParameter(f"x0 has {x0.size} entries, instance expects {bp.instance.dim_x}")
    if schedule.mu != bp.mu:
        logger.warning("schedule mu=%g differs from problem mu=%g; using the problem's", schedule.mu, bp.mu)
    lam0 = schedule_at(schedule, 0).lam
    warm_tol = schedule.eta / 2.0
    if z0 is None:
        z0 = barrier.solve_exact_center(bp, x0, tol=warm_tol).y_star
    if y0 is None:
        y0 = barrier.solve_proxy_center(bp, lam0, x0, y_init=z0, tol=warm_tol).y_star
    geometry.interior_slacks(bp.polytope, y0)
    geometry.interior_slacks(bp.polytope, z0)

    record = TraceRecord(k=0, x=x0, y=np.array(y0, dtype=float), z=np.array(z0, dtype=float), lam=lam0)
    trace = RunTrace(records=[record], projection=projection)
    logger.info("BMFO run: %s schedule, K=%d, T=%d, mu=%g", schedule.kind, K, schedule.T, bp.mu)
    for _ in range(K):
        if budget_s is not None and time.monotonic() - started >= budget_s:
            trace.budget_exhausted = True
            logger.warning("wall-clock budget of %.3gs exhausted after %d iterations", budget_s, record.k)
            break
        record = _outer_step(bp, schedule, record.state, f_grad_source, projection)
        if record.guard_exact or record.guard_proxy:
            logger.debug("k=%d step guard active (exact=%d, proxy=%d)", record.k, record.guard_exact, record.guard_proxy)
        trace.records.append(record)
    if trace.guard_activations:
        logger.warning("step guard activated %d times over %d iterations", trace.guard_activations, K)
    logger.info("BMFO run finished: |x_K|=%.4g, lambda_K=%.4g", float(np.linalg.norm(record.x)), record.lam)
    return trace
