from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
import scipy.linalg

from services.geometry import Polytope
from utils.errors import DimensionMismatch, InvalidParameter, NotSPD
from utils.numerics import sample_ball

logger = logging.getLogger(__name__)

Oracle = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class DeclaredConstants:
    """Euclidean smoothness/boundedness constants valid on the visited region."""

    l_g1: float
    l_f0: float
    l_f1: float
    l_g0: float

    def __post_init__(self):
        for name in ("l_g1", "l_f0", "l_f1", "l_g0"):
            if not getattr(self, name) > 0:
                raise InvalidParameter(f"declared constant {name} must be positive")


@dataclass(frozen=True)
class BilevelInstance:
    """First-order oracles for the outer objective f and the lower objective g.

    g_hess_xy(x, y) has shape (dim_y, dim_x): entry [i, j] is d^2 g / dy_i dx_j.
    Second-order oracles are only used by the center solvers and diagnostics.
    """

    dim_x: int
    dim_y: int
    f_value: Callable[[np.ndarray, np.ndarray], float]
    f_grad_x: Oracle
    f_grad_y: Oracle
    g_value: Callable[[np.ndarray, np.ndarray], float]
    g_grad_x: Oracle
    g_grad_y: Oracle
    rho_g: float
    polytope: Polytope
    g_hess_yy: Optional[Oracle] = None
    g_hess_xy: Optional[Oracle] = None
    f_hess_yy: Optional[Oracle] = None
    declared: Optional[DeclaredConstants] = None
    name: str = "instance"

    def __post_init__(self):
        if self.polytope.d != self.dim_y:
            raise DimensionMismatch(f"polytope has dimension {self.polytope.d}, instance declares dim_y={self.dim_y}")
        if not self.rho_g > 0:
            raise InvalidParameter("rho_g must be positive")

    @property
    def has_second_order(self) -> bool:
        return self.g_hess_yy is not None and self.g_hess_xy is not None


class StochasticUpperOracle:
    """Adds zero-mean ball noise to the f-gradients of a base instance.

    g oracles pass through untouched. Holds mutable PRNG state, so one
    oracle belongs to one run at a time.
    """

    def __init__(self, base: BilevelInstance, noise_radius_x: float, noise_radius_y: float, rng_seed: int):
        if noise_radius_x < 0 or noise_radius_y < 0:
            raise InvalidParameter("noise radii must be nonnegative")
        self.base = base
        self.noise_radius_x = float(noise_radius_x)
        self.noise_radius_y = float(noise_radius_y)
        self.rng_seed = int(rng_seed)
        self.rng = np.random.default_rng(self.rng_seed)

    def f_grad_x(self, x, y) -> np.ndarray:
        return self.base.f_grad_x(x, y) + sample_ball(self.rng, self.base.dim_x, self.noise_radius_x)

    def f_grad_y(self, x, y) -> np.ndarray:
        return self.base.f_grad_y(x, y) + sample_ball(self.rng, self.base.dim_y, self.noise_radius_y)


def sample_noisy_f_grads(oracle: StochasticUpperOracle, x, y) -> Tuple[np.ndarray, np.ndarray]:
    return oracle.f_grad_x(x, y), oracle.f_grad_y(x, y)


def _spd_min_eig(Q: np.ndarray, label: str) -> float:
    if not np.allclose(Q, Q.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(Q).max())):
        raise NotSPD(f"{label} is not symmetric")
    lam_min = float(scipy.linalg.eigvalsh(Q, subset_by_index=[0, 0])[0])
    if lam_min <= 0:
        raise NotSPD(f"{label} is not positive definite (lambda_min={lam_min:.3e})")
    return lam_min


def quadratic_instance(
    Q_f,
    c_f,
    Q_g,
    c_g_matrix,
    c_g_offset,
    polytope: Polytope,
    declared: Optional[DeclaredConstants] = None,
    name: str = "quadratic",
) -> BilevelInstance:
    """f = 1/2 (y - c_f)^T Q_f (y - c_f), g = 1/2 (y - c(x))^T Q_g (y - c(x)), c(x) = M x + c0."""
    Q_f = np.atleast_2d(np.asarray(Q_f, dtype=float))
    Q_g = np.atleast_2d(np.asarray(Q_g, dtype=float))
    c_f = np.asarray(c_f, dtype=float).reshape(-1)
    M = np.atleast_2d(np.asarray(c_g_matrix, dtype=float))
    c0 = np.asarray(c_g_offset, dtype=float).reshape(-1)
    dim_y = polytope.d
    dim_x = M.shape[1]
    if Q_f.shape != (dim_y, dim_y) or Q_g.shape != (dim_y, dim_y) or c_f.size != dim_y:
        raise DimensionMismatch("Q_f, Q_g and c_f must match the polytope dimension")
    if M.shape[0] != dim_y or c0.size != dim_y:
        raise DimensionMismatch("c(x) = M x + c0 must map into the polytope dimension")
    rho_g = _spd_min_eig(Q_g, "Q_g")

    def residual(x, y):
        return np.asarray(y, dtype=float) - M @ np.asarray(x, dtype=float) - c0

    return BilevelInstance(
        dim_x=dim_x,
        dim_y=dim_y,
        f_value=lambda x, y: 0.5 * float((y - c_f) @ Q_f @ (y - c_f)),
        f_grad_x=lambda x, y: np.zeros(dim_x),
        f_grad_y=lambda x, y: Q_f @ (np.asarray(y, dtype=float) - c_f),
        g_value=lambda x, y: 0.5 * float(residual(x, y) @ Q_g @ residual(x, y)),
        g_grad_x=lambda x, y: -M.T @ (Q_g @ residual(x, y)),
        g_grad_y=lambda x, y: Q_g @ residual(x, y),
        rho_g=rho_g,
        polytope=polytope,
        g_hess_yy=lambda x, y: Q_g,
        g_hess_xy=lambda x, y: -Q_g @ M,
        f_hess_yy=lambda x, y: Q_f,
        declared=declared,
        name=name,
    )
