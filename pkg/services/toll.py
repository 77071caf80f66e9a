"""Congestion-toll benchmark family.

x are tolls on n corridors, y the induced corridor flows on
Y(tau) = {0 <= y <= u, C y <= tau d, 1^T y <= D}. The follower minimizes
g = l^T y + 1/2 y^T Q y + x^T y + kappa/2 (D - 1^T y)^2 and the toll authority
scores f = l^T y + 1/2 y^T Q y + beta (D - 1^T y)^2 + rho_rev (x^T y - R_tar)^2
+ rho_x/2 ||x||^2.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from services import barrier
from services.barrier import BarrierProblem
from services.bmfo import ProjectionBox
from services.geometry import Polytope
from services.problem import BilevelInstance, DeclaredConstants
from utils.errors import InvalidParameter

logger = logging.getLogger(__name__)

MAX_BOTTLENECKS_PER_CORRIDOR = 3
GAP_FLOOR = 1e-4
GAP_RELATIVE = 1e-3
REFERENCE_BUDGET_FACTOR = 50
DEFAULT_TOLL_BOX = ProjectionBox(lower=0.0, upper=10.0)


@dataclass(frozen=True)
class TollInstance:
    n: int
    seed: int
    tau: float
    C: np.ndarray
    u: np.ndarray
    ell: np.ndarray
    q: np.ndarray
    d: np.ndarray
    V: np.ndarray
    D: float
    R_tar: float
    kappa: float
    beta: float
    rho_rev: float
    rho_x: float
    x0: np.ndarray
    y_int: np.ndarray

    @property
    def m_b(self) -> int:
        return self.C.shape[0]

    @property
    def Q(self) -> np.ndarray:
        return np.diag(self.q) + self.V @ self.V.T / self.n


def bottleneck_count(n: int) -> int:
    return max(5, n // 10)


def _incidence(rng: np.random.Generator, n: int, m_b: int) -> np.ndarray:
    C = np.zeros((m_b, n))
    for i in range(n):
        k = int(rng.integers(1, MAX_BOTTLENECKS_PER_CORRIDOR + 1))
        C[rng.choice(m_b, size=k, replace=False), i] = 1.0
    # coverage repair, lowest-index uncovered bottleneck first
    for r in range(m_b):
        if C[r].any():
            continue
        open_corridors = np.flatnonzero(C.sum(axis=0) < MAX_BOTTLENECKS_PER_CORRIDOR)
        if open_corridors.size:
            C[r, int(rng.choice(open_corridors))] = 1.0
            continue
        # every corridor is full: trade the corridor's most shared bottleneck for r
        i = int(rng.integers(n))
        used = np.flatnonzero(C[:, i])
        C[used[np.argmax(C[used].sum(axis=1))], i] = 0.0
        C[r, i] = 1.0
    return C


def generate_toll_instance(n: int, seed: int, tau: float) -> TollInstance:
    """Samples one instance from numpy.random.default_rng(seed) in a fixed order."""
    if not (isinstance(n, (int, np.integer)) and n >= 10):
        raise InvalidParameter(f"n must be an integer >= 10, got {n!r}")
    if not 0.0 < tau <= 1.0:
        raise InvalidParameter(f"tau must lie in (0, 1], got {tau}")
    rng = np.random.default_rng(seed)
    m_b = bottleneck_count(int(n))
    C = _incidence(rng, int(n), m_b)

    u = rng.uniform(0.8, 1.2, size=n)
    D = 0.6 * float(u.sum())
    y_int = 0.15 * u
    if y_int.sum() >= 0.5 * D:
        y_int *= 0.45 * D / float(y_int.sum())
    r = C @ u
    c = C @ y_int
    d_tilde = rng.uniform(0.45, 0.65, size=m_b) * r
    d = np.maximum(d_tilde, (1.35 * c + 1e-3) / tau)

    ell = rng.uniform(0.5, 2.0, size=n)
    q = rng.uniform(0.1, 0.5, size=n)
    V = rng.normal(0.0, 0.25, size=(n, 3))
    x0 = np.full(n, 0.5)
    logger.debug("toll instance n=%d seed=%d tau=%g: m_b=%d, D=%.4g", n, seed, tau, m_b, D)
    return TollInstance(
        n=int(n), seed=int(seed), tau=float(tau), C=C, u=u, ell=ell, q=q, d=d, V=V, D=D,
        R_tar=0.25 * D * float(x0.mean()),
        kappa=1.0, beta=1.0, rho_rev=1e-2, rho_x=1e-3,
        x0=x0, y_int=y_int,
    )


def toll_polytope(ti: TollInstance) -> Polytope:
    """Rows y <= u, -y <= 0, C y <= tau d, 1^T y <= D; each slack is bounded by its right-hand side."""
    eye = np.eye(ti.n)
    A = np.vstack([eye, -eye, ti.C, np.ones((1, ti.n))])
    b = np.concatenate([ti.u, np.zeros(ti.n), ti.tau * ti.d, [ti.D]])
    bounds = np.concatenate([ti.u, ti.u, ti.tau * ti.d, [ti.D]])
    return Polytope(A=A, b=b, interior_witness=ti.y_int, slack_upper_bounds=bounds)


def toll_declared_constants(ti: TollInstance, x_box: ProjectionBox = DEFAULT_TOLL_BOX) -> DeclaredConstants:
    """Euclidean constants over Y(tau) x box^n, from the instance data alone."""
    Q = ti.Q
    ones = np.ones((ti.n, ti.n))
    x_max = max(abs(x_box.lower), abs(x_box.upper)) * np.sqrt(ti.n)
    u_norm = float(np.linalg.norm(ti.u))
    l_f0 = (
        float(np.linalg.norm(ti.ell))
        + float(scipy.linalg.eigvalsh(Q)[-1]) * u_norm
        + 2.0 * ti.beta * ti.D * np.sqrt(ti.n)
        + 2.0 * ti.rho_rev * (x_max * u_norm + ti.R_tar) * x_max
    )
    return DeclaredConstants(
        l_g1=float(scipy.linalg.eigvalsh(Q + ti.kappa * ones)[-1]),
        l_f0=l_f0,
        l_f1=float(scipy.linalg.eigvalsh(Q + 2.0 * ti.beta * ones)[-1]) + 2.0 * ti.rho_rev * x_max**2,
        l_g0=u_norm,
    )


def toll_bilevel_instance(ti: TollInstance, x_box: ProjectionBox = DEFAULT_TOLL_BOX) -> Tuple[Polytope, BilevelInstance]:
    P = toll_polytope(ti)
    Q = ti.Q
    ell, D, n = ti.ell, ti.D, ti.n
    ones = np.ones(n)

    def f_value(x, y):
        return float(
            ell @ y + 0.5 * y @ Q @ y + ti.beta * (D - y.sum()) ** 2
            + ti.rho_rev * (x @ y - ti.R_tar) ** 2 + 0.5 * ti.rho_x * x @ x
        )

    def f_grad_y(x, y):
        return ell + Q @ y - 2.0 * ti.beta * (D - y.sum()) * ones + 2.0 * ti.rho_rev * (x @ y - ti.R_tar) * x

    def f_grad_x(x, y):
        return 2.0 * ti.rho_rev * (x @ y - ti.R_tar) * y + ti.rho_x * x

    def f_hess_yy(x, y):
        return Q + 2.0 * ti.beta * np.outer(ones, ones) + 2.0 * ti.rho_rev * np.outer(x, x)

    def g_value(x, y):
        return float(ell @ y + 0.5 * y @ Q @ y + x @ y + 0.5 * ti.kappa * (D - y.sum()) ** 2)

    def g_grad_y(x, y):
        return ell + Q @ y + x - ti.kappa * (D - y.sum()) * ones

    g_hess = Q + ti.kappa * np.outer(ones, ones)
    instance = BilevelInstance(
        dim_x=n,
        dim_y=n,
        f_value=lambda x, y: f_value(np.asarray(x, dtype=float), np.asarray(y, dtype=float)),
        f_grad_x=lambda x, y: f_grad_x(np.asarray(x, dtype=float), np.asarray(y, dtype=float)),
        f_grad_y=lambda x, y: f_grad_y(np.asarray(x, dtype=float), np.asarray(y, dtype=float)),
        g_value=lambda x, y: g_value(np.asarray(x, dtype=float), np.asarray(y, dtype=float)),
        g_grad_x=lambda x, y: np.array(y, dtype=float),
        g_grad_y=lambda x, y: g_grad_y(np.asarray(x, dtype=float), np.asarray(y, dtype=float)),
        rho_g=float(scipy.linalg.eigvalsh(Q, subset_by_index=[0, 0])[0]),
        polytope=P,
        g_hess_yy=lambda x, y: g_hess,
        g_hess_xy=lambda x, y: np.eye(n),
        f_hess_yy=lambda x, y: f_hess_yy(np.asarray(x, dtype=float), np.asarray(y, dtype=float)),
        declared=toll_declared_constants(ti, x_box),
        name=f"toll-n{n}-s{ti.seed}-tau{ti.tau:g}",
    )
    return P, instance


def normalized_gap(F_orig: float, F_ref: float) -> float:
    return (F_orig - F_ref) / max(GAP_FLOOR, GAP_RELATIVE * abs(F_ref))


def original_objective(instance: BilevelInstance, x, mu_ref: float = 1e-10) -> float:
    """F_orig(x) = f(x, y*(x)) with y*(x) solved on Y(tau) itself."""
    return barrier.reference_constrained_solution(instance, np.asarray(x, dtype=float), mu_ref=mu_ref)[1]


def toll_normalized_gap(ti: TollInstance, x_final, F_ref: float, instance: Optional[BilevelInstance] = None) -> float:
    if instance is None:
        instance = toll_bilevel_instance(ti)[1]
    return normalized_gap(original_objective(instance, x_final), F_ref)


@dataclass
class ReferencePool:
    """Candidate toll vectors scored by F_orig; F_ref is the best of them."""

    entries: Dict[str, float] = field(default_factory=dict)
    points: Dict[str, np.ndarray] = field(default_factory=dict)

    def add(self, source: str, instance: BilevelInstance, x) -> float:
        value = original_objective(instance, x)
        self.entries[source] = value
        self.points[source] = np.array(x, dtype=float)
        logger.info("reference pool: %s -> F_orig=%.10g", source, value)
        return value

    @property
    def F_ref(self) -> float:
        return min(self.entries.values())

    @property
    def best_source(self) -> str:
        return min(self.entries, key=self.entries.get)


def projected_hypergradient_descent(
    instance: BilevelInstance,
    x0,
    mu_schedule: Sequence[float] = (1e-2, 1e-3),
    iterations: int = 2000,
    box: ProjectionBox = DEFAULT_TOLL_BOX,
    step0: float = 1.0,
) -> np.ndarray:
    """Projected exact-hypergradient descent on F_mu with Armijo backtracking, mu decreased stage by stage."""
    if iterations < 1 or not mu_schedule:
        raise InvalidParameter("hypergradient descent needs iterations >= 1 and a nonempty mu schedule")
    x = box.apply(np.array(x0, dtype=float))
    per_stage = max(1, iterations // len(mu_schedule))
    y_warm = None
    for mu in mu_schedule:
        bp = BarrierProblem(instance, mu)
        step = step0
        y_warm = barrier.solve_exact_center(bp, x, y_init=y_warm).y_star
        value = instance.f_value(x, y_warm)
        for it in range(per_stage):
            grad = barrier.exact_hypergradient(bp, x, y_init=y_warm)
            step = min(step * 2.0, 1e3)
            while True:
                candidate = box.apply(x - step * grad)
                move = candidate - x
                y_candidate = barrier.solve_exact_center(bp, candidate, y_init=y_warm).y_star
                candidate_value = instance.f_value(candidate, y_candidate)
                if candidate_value <= value - 1e-4 * float(move @ move) / step or step < 1e-12:
                    break
                step *= 0.5
            if float(np.linalg.norm(move)) <= 1e-12 * max(1.0, float(np.linalg.norm(x))):
                logger.debug("hypergradient descent stalled at mu=%g after %d iterations", mu, it)
                break
            x, y_warm, value = candidate, y_candidate, candidate_value
        logger.info("hypergradient descent stage mu=%g finished: F_mu=%.10g", mu, value)
    return x


def build_reference_pool(
    ti: TollInstance,
    instance: Optional[BilevelInstance] = None,
    test_budget: int = 500,
    hypergradient_iterations: Optional[int] = None,
    mu_schedule: Sequence[float] = (1e-2, 1e-3),
    extra_points: Optional[Dict[str, np.ndarray]] = None,
) -> ReferencePool:
    """x0, projected hypergradient descent, and any supplied candidates (e.g. a long BMFO run).

    The descent runs REFERENCE_BUDGET_FACTOR * test_budget updates unless
    hypergradient_iterations is given.
    """
    if hypergradient_iterations is None:
        hypergradient_iterations = REFERENCE_BUDGET_FACTOR * test_budget
    if instance is None:
        instance = toll_bilevel_instance(ti)[1]
    pool = ReferencePool()
    pool.add("x0", instance, ti.x0)
    pool.add(
        "exact-hypergradient",
        instance,
        projected_hypergradient_descent(instance, ti.x0, mu_schedule=mu_schedule, iterations=hypergradient_iterations),
    )
    for source, x in (extra_points or {}).items():
        pool.add(source, instance, x)
    return pool


def toll_instance_invariants(ti: TollInstance) -> List[str]:
    """Violated generator invariants, empty when the instance is well formed."""
    problems = []
    if ti.m_b != bottleneck_count(ti.n):
        problems.append("m_b")
    if not np.all(ti.C.sum(axis=1) >= 1):
        problems.append("uncovered bottleneck")
    per_corridor = ti.C.sum(axis=0)
    if not np.all((per_corridor >= 1) & (per_corridor <= MAX_BOTTLENECKS_PER_CORRIDOR)):
        problems.append("corridor bottleneck count")
    if not (np.all(ti.y_int > 0) and np.all(ti.y_int < ti.u)):
        problems.append("y_int outside (0, u)")
    if not np.all(ti.C @ ti.y_int < ti.tau * ti.d):
        problems.append("bottleneck infeasible at y_int")
    if not ti.y_int.sum() < 0.5 * ti.D:
        problems.append("demand cap at y_int")
    if not np.isclose(ti.D, 0.6 * ti.u.sum()):
        problems.append("D")
    return problems
