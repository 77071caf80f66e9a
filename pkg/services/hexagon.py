"""Moving-center tracking on a fixed irregular hexagon.

g(x, y) = 1/2 (y - c(x))^T Q (y - c(x)) with c(x) = (1 - x) c_start + x c_end,
x swept over the grid x_k = k/(K-1). The center drifts toward the right
slanted face, where a fixed Euclidean step loses the Dikin tube while the
barrier-preconditioned tracker does not.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg

from services import barrier, bmfo, geometry
from services.barrier import BarrierProblem
from services.diagnostics import TubeReport, TubeRow, anchored_error
from services.geometry import Polytope
from services.problem import BilevelInstance, DeclaredConstants, quadratic_instance
from utils.errors import InvalidConfig, NotSPD
from utils.numerics import fraction_to_boundary

logger = logging.getLogger(__name__)

DEFAULT_VERTICES: Tuple[Tuple[float, float], ...] = (
    (2.0, 0.0),
    (1.2, 1.6),
    (-0.8, 1.8),
    (-1.9, 0.4),
    (-1.3, -1.4),
    (0.9, -1.7),
)


@dataclass(frozen=True)
class HexagonConfig:
    vertices: Tuple[Tuple[float, float], ...] = DEFAULT_VERTICES
    Q: Tuple[Tuple[float, float], ...] = ((1.2, 0.15), (0.15, 0.8))
    mu: float = 5e-4
    c_start: Tuple[float, float] = (0.0, 0.0)
    c_end: Tuple[float, float] = (2.2, 0.3)
    K: int = 2000
    T: int = 30
    eta: float = 0.25
    gamma_euclidean_factor: float = 0.7
    gamma_barrier_factor: float = 0.5


@dataclass(frozen=True)
class HexagonExample:
    polytope: Polytope
    instance: BilevelInstance
    grid: np.ndarray
    c_start: np.ndarray
    c_end: np.ndarray

    def path(self, x: float) -> np.ndarray:
        return (1.0 - x) * self.c_start + x * self.c_end


def hexagon_polytope(vertices) -> Polytope:
    """Halfspaces from counter-clockwise vertices with unit outward normals."""
    V = np.asarray(vertices, dtype=float)
    if V.ndim != 2 or V.shape[1] != 2 or V.shape[0] < 3:
        raise InvalidConfig("vertices must be a list of at least three 2-D points")
    nxt = np.roll(V, -1, axis=0)
    edges = nxt - V
    turns = edges[:, 0] * np.roll(edges, -1, axis=0)[:, 1] - edges[:, 1] * np.roll(edges, -1, axis=0)[:, 0]
    if not np.all(turns > 0):
        raise InvalidConfig("vertices must describe a strictly convex polygon in counter-clockwise order")
    normals = np.column_stack([edges[:, 1], -edges[:, 0]])
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    b = np.einsum("ij,ij->i", normals, V)
    slack_bounds = (b[:, None] - normals @ V.T).max(axis=1)
    return Polytope(A=normals, b=b, interior_witness=V.mean(axis=0), slack_upper_bounds=slack_bounds)


def hexagon_declared_constants(cfg: HexagonConfig) -> DeclaredConstants:
    """Exact constants over the hexagon and x in [0, 1]; every bound is a max of a convex function."""
    V = np.asarray(cfg.vertices, dtype=float)
    Q = np.asarray(cfg.Q, dtype=float)
    c_start = np.asarray(cfg.c_start, dtype=float)
    c_end = np.asarray(cfg.c_end, dtype=float)
    shift = Q @ (c_end - c_start)
    l_g0 = max(abs(float(shift @ (v - c))) for v in V for c in (c_start, c_end))
    return DeclaredConstants(
        l_g1=float(scipy.linalg.eigvalsh(Q)[-1]),
        l_f0=float(np.linalg.norm(V, axis=1).max()),
        l_f1=1.0,
        l_g0=max(l_g0, 1e-12),
    )


def build_hexagon_example(cfg: HexagonConfig) -> HexagonExample:
    if cfg.K < 2 or cfg.T < 1:
        raise InvalidConfig("hexagon example needs K >= 2 and T >= 1")
    if not cfg.mu > 0 or not 0.0 < cfg.eta < 0.5:
        raise InvalidConfig("hexagon example needs mu > 0 and eta in (0, 1/2)")
    P = hexagon_polytope(cfg.vertices)
    c_start = np.asarray(cfg.c_start, dtype=float)
    c_end = np.asarray(cfg.c_end, dtype=float)
    if not geometry.is_strict_interior(P, c_start):
        raise InvalidConfig("c_start must be strictly inside the hexagon")
    try:
        instance = quadratic_instance(
            Q_f=np.eye(2),
            c_f=np.zeros(2),
            Q_g=np.asarray(cfg.Q, dtype=float),
            c_g_matrix=(c_end - c_start).reshape(2, 1),
            c_g_offset=c_start,
            polytope=P,
            declared=hexagon_declared_constants(cfg),
            name="hexagon",
        )
    except NotSPD as exc:
        raise InvalidConfig(f"hexagon Q must be SPD: {exc}") from exc
    grid = np.arange(cfg.K) / (cfg.K - 1)
    return HexagonExample(polytope=P, instance=instance, grid=grid, c_start=c_start, c_end=c_end)


def critical_euclidean_step(bp: BarrierProblem, x, y_center) -> float:
    """gamma_crit = 2 / lambda_max(hess_yy psi) at the exact center."""
    H = barrier.psi_hess_yy(bp, np.atleast_1d(x), y_center)
    return 2.0 / float(scipy.linalg.eigvalsh(H)[-1])


def local_barrier_smoothness(bp: BarrierProblem, x, z) -> float:
    """lambda_max(H_phi(z)^-1 hess_yy psi(x, z)), the smoothness of psi in the metric anchored at z.

    Sets the barrier tracker step of the hexagon benchmark. It reads g_hess_yy,
    so it is a benchmark and diagnostics rule; the solver loop in services.bmfo
    never calls it. Raises MissingSecondOrderOracle on first-order instances.
    """
    H_phi = geometry.barrier_hessian(bp.polytope, z)
    return float(scipy.linalg.eigh(barrier.psi_hess_yy(bp, np.atleast_1d(x), z), H_phi, eigvals_only=True)[-1])


@dataclass(frozen=True)
class HexagonRow:
    k: int
    x: float
    z: np.ndarray
    err: float
    psi_gap: float
    f_value: float
    guard: int
    gamma: float


@dataclass
class HexagonComparison:
    barrier_rows: List[HexagonRow] = field(default_factory=list)
    euclidean_rows: List[HexagonRow] = field(default_factory=list)
    barrier_tube: Optional[TubeReport] = None
    euclidean_tube: Optional[TubeReport] = None
    gamma_crit0: float = 0.0
    gamma_euclidean: float = 0.0
    centers: Optional[np.ndarray] = None

    @property
    def barrier_guard_activations(self) -> int:
        return sum(r.guard for r in self.barrier_rows)


def _euclidean_steps(bp, x, z, gamma, T) -> Tuple[np.ndarray, int]:
    guards = 0
    P = bp.polytope
    for _ in range(T):
        step = -gamma * barrier.psi_grad_y(bp, x, z)
        t = fraction_to_boundary(geometry.slacks(P, z), P.A @ step, keep=bmfo.GUARD_KEEP)
        if t < 1.0:
            guards += 1
        z = z + t * step
    return z, guards


def _row(bp, k, x, z, center, psi_star, guard, gamma) -> HexagonRow:
    xv = np.atleast_1d(x)
    return HexagonRow(
        k=k,
        x=float(x),
        z=np.array(z),
        err=anchored_error(bp.polytope, z, center),
        psi_gap=barrier.psi_value(bp, xv, z) - psi_star,
        f_value=bp.instance.f_value(xv, z),
        guard=guard,
        gamma=gamma,
    )


def exact_center_path(bp: BarrierProblem, grid: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    centers = []
    y = None
    for x in grid:
        y = barrier.solve_exact_center(bp, np.atleast_1d(x), y_init=y, tol=tol).y_star
        centers.append(y)
    return np.array(centers)


def run_hexagon_comparison(cfg: HexagonConfig) -> HexagonComparison:
    """Barrier-metric vs fixed-step Euclidean exact tracker along the center path.

    Record 0 is the warm start at x_0; record k + 1 is the tracker after its T
    inner steps at grid point x_k.
    """
    example = build_hexagon_example(cfg)
    bp = BarrierProblem(example.instance, cfg.mu)
    centers = exact_center_path(bp, example.grid)
    psi_stars = [barrier.psi_value(bp, np.atleast_1d(x), c) for x, c in zip(example.grid, centers)]

    result = HexagonComparison(centers=centers)
    result.gamma_crit0 = critical_euclidean_step(bp, example.grid[0], centers[0])
    result.gamma_euclidean = cfg.gamma_euclidean_factor * result.gamma_crit0

    z_bar = centers[0].copy()
    z_euc = centers[0].copy()
    result.barrier_rows.append(_row(bp, 0, example.grid[0], z_bar, centers[0], psi_stars[0], 0, 0.0))
    result.euclidean_rows.append(_row(bp, 0, example.grid[0], z_euc, centers[0], psi_stars[0], 0, result.gamma_euclidean))
    logger.info(
        "hexagon: K=%d T=%d mu=%g gamma_crit(0)=%.4g gamma_E=%.4g",
        cfg.K, cfg.T, cfg.mu, result.gamma_crit0, result.gamma_euclidean,
    )

    for k, x in enumerate(example.grid):
        xv = np.atleast_1d(x)
        gamma_k = cfg.gamma_barrier_factor / local_barrier_smoothness(bp, xv, z_bar)
        inner = bmfo.frozen_inner_loop_exact(bp, xv, z_bar, gamma_k, cfg.T)
        z_bar = inner.point
        result.barrier_rows.append(_row(bp, k + 1, x, z_bar, centers[k], psi_stars[k], inner.guard_activations, gamma_k))

        z_euc, guards = _euclidean_steps(bp, xv, z_euc, result.gamma_euclidean, cfg.T)
        result.euclidean_rows.append(_row(bp, k + 1, x, z_euc, centers[k], psi_stars[k], guards, result.gamma_euclidean))

    result.barrier_tube = TubeReport(eta=cfg.eta, rows=[TubeRow(k=r.k, exact_err=r.err) for r in result.barrier_rows])
    result.euclidean_tube = TubeReport(eta=cfg.eta, rows=[TubeRow(k=r.k, exact_err=r.err) for r in result.euclidean_rows])
    logger.info(
        "hexagon: barrier max err %.4g (exit %s), euclidean max err %.4g (exit %s)",
        result.barrier_tube.max_exact_err, result.barrier_tube.first_exit_index,
        result.euclidean_tube.max_exact_err, result.euclidean_tube.first_exit_index,
    )
    return result


@dataclass(frozen=True)
class StabilityRow:
    sweep: int
    barrier_err: float
    barrier_gap: float
    euclidean_err: float
    euclidean_gap: float


@dataclass(frozen=True)
class InteriorStability:
    rows: List[StabilityRow]
    gamma_crit: float
    gamma_euclidean: float
    min_center_slack: float

    @property
    def euclidean_stable(self) -> bool:
        return self.rows[-1].euclidean_err <= self.rows[0].euclidean_err

    @property
    def barrier_stable(self) -> bool:
        return self.rows[-1].barrier_err <= self.rows[0].barrier_err


def run_interior_stability(
    cfg: HexagonConfig,
    x_fixed: float = 0.5,
    sweeps: int = 40,
    euclidean_factor: float = 1.05,
    start_fraction: float = 0.5,
) -> InteriorStability:
    """Both trackers at a fixed interior x from a common start, T inner steps per sweep.

    The Euclidean step sits slightly above gamma_crit; the start is displaced
    along the stiffest curvature direction of psi.
    """
    example = build_hexagon_example(cfg)
    bp = BarrierProblem(example.instance, cfg.mu)
    xv = np.atleast_1d(float(x_fixed))
    P = bp.polytope
    center = barrier.solve_exact_center(bp, xv, tol=1e-12).y_star
    psi_star = barrier.psi_value(bp, xv, center)

    H = barrier.psi_hess_yy(bp, xv, center)
    eigvals, eigvecs = scipy.linalg.eigh(H)
    direction = eigvecs[:, -1]
    # distance to the boundary along the stiffest direction of psi
    decrease = P.A @ direction
    positive = decrease > 0
    reach = float((geometry.slacks(P, center)[positive] / decrease[positive]).min())
    z0 = center + start_fraction * reach * direction

    gamma_crit = 2.0 / float(eigvals[-1])
    gamma_e = euclidean_factor * gamma_crit
    z_bar = z0.copy()
    z_euc = z0.copy()
    rows = []
    for t in range(sweeps + 1):
        rows.append(
            StabilityRow(
                sweep=t,
                barrier_err=anchored_error(P, z_bar, center),
                barrier_gap=barrier.psi_value(bp, xv, z_bar) - psi_star,
                euclidean_err=anchored_error(P, z_euc, center),
                euclidean_gap=barrier.psi_value(bp, xv, z_euc) - psi_star,
            )
        )
        if t == sweeps:
            break
        gamma_b = cfg.gamma_barrier_factor / local_barrier_smoothness(bp, xv, z_bar)
        z_bar = bmfo.frozen_inner_loop_exact(bp, xv, z_bar, gamma_b, cfg.T).point
        z_euc, _ = _euclidean_steps(bp, xv, z_euc, gamma_e, cfg.T)
    return InteriorStability(
        rows=rows,
        gamma_crit=gamma_crit,
        gamma_euclidean=gamma_e,
        min_center_slack=float(geometry.slacks(P, center).min()),
    )
