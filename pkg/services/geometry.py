"""Polytope representation, log-barrier calculus and anchored Dikin metrics.

The feasible set is Y = {y : A y <= b}. All barrier quantities are built from
the slack vector s(y) = b - A y:

    phi(y)      = -sum(log s)
    grad phi(y) = A^T s^-1
    hess phi(y) = A^T Diag(s^-2) A
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from utils.errors import (
    ConvergenceFailure,
    DimensionMismatch,
    FactorizationFailure,
    InvalidInput,
    MissingBounds,
    NonInterior,
)

logger = logging.getLogger(__name__)

DENSE_THRESHOLD = 512
SOLVE_TOL = 1e-10
RANK_TOL = 1e-12


@dataclass(frozen=True)
class Polytope:
    A: np.ndarray
    b: np.ndarray
    interior_witness: np.ndarray
    slack_upper_bounds: Optional[np.ndarray] = None

    def __post_init__(self):
        A = np.array(self.A, dtype=float, ndmin=2)
        b = np.array(self.b, dtype=float).reshape(-1)
        witness = np.array(self.interior_witness, dtype=float).reshape(-1)
        if A.shape[0] != b.size:
            raise DimensionMismatch(f"A has {A.shape[0]} rows but b has {b.size} entries")
        if A.shape[1] != witness.size:
            raise DimensionMismatch(f"A has {A.shape[1]} columns but the witness has {witness.size} entries")
        bounds = None
        if self.slack_upper_bounds is not None:
            bounds = np.array(self.slack_upper_bounds, dtype=float).reshape(-1)
            if bounds.size != b.size:
                raise DimensionMismatch("slack_upper_bounds must have one entry per constraint")
            if np.any(bounds <= 0):
                raise InvalidInput("slack_upper_bounds must be positive")
        # column-pivoted QR: |R_kk| is non-increasing, so the last pivot decides the rank
        if A.shape[0] < A.shape[1]:
            raise InvalidInput("A must have full column rank (fewer rows than columns)")
        R = scipy.linalg.qr(A, mode="r", pivoting=True)[0]
        pivots = np.abs(np.diag(R))
        scale = max(np.linalg.norm(A), 1.0)
        if pivots.size < A.shape[1] or pivots.min() <= RANK_TOL * scale:
            raise InvalidInput("A must have full column rank")
        s = b - A @ witness
        if not np.all(s > 0):
            raise NonInterior("interior witness violates a constraint", float(s.min()))
        for name, value in (("A", A), ("b", b), ("interior_witness", witness), ("slack_upper_bounds", bounds)):
            if value is not None:
                value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.A.shape[1]


def box_polytope(lower, upper, interior_witness=None) -> Polytope:
    """{lower <= y <= upper} as A = [I; -I], b = [u; -l]; slack bounds are u - l."""
    lower = np.asarray(lower, dtype=float).reshape(-1)
    upper = np.asarray(upper, dtype=float).reshape(-1)
    if lower.shape != upper.shape:
        raise DimensionMismatch("box bounds must have the same length")
    if not np.all(upper > lower):
        raise InvalidInput("box needs upper > lower in every coordinate")
    eye = np.eye(lower.size)
    width = upper - lower
    witness = 0.5 * (lower + upper) if interior_witness is None else interior_witness
    return Polytope(
        A=np.vstack([eye, -eye]),
        b=np.concatenate([upper, -lower]),
        interior_witness=witness,
        slack_upper_bounds=np.concatenate([width, width]),
    )


def _as_point(P: Polytope, y) -> np.ndarray:
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != P.d:
        raise DimensionMismatch(f"expected a point of dimension {P.d}, got {y.size}")
    return y


def slacks(P: Polytope, y) -> np.ndarray:
    return P.b - P.A @ _as_point(P, y)


def is_strict_interior(P: Polytope, y, margin: float = 0.0) -> bool:
    return bool(np.all(slacks(P, y) > margin))


def interior_slacks(P: Polytope, y) -> np.ndarray:
    s = slacks(P, y)
    if not np.all(s > 0):
        raise NonInterior(min_slack=float(s.min()))
    return s


def barrier_value(P: Polytope, y) -> float:
    return float(-np.sum(np.log(interior_slacks(P, y))))


def barrier_gradient(P: Polytope, y) -> np.ndarray:
    return P.A.T @ (1.0 / interior_slacks(P, y))


def barrier_hessian_apply(P: Polytope, y, v) -> np.ndarray:
    s = interior_slacks(P, y)
    return P.A.T @ ((P.A @ np.asarray(v, dtype=float)) / s**2)


def barrier_hessian(P: Polytope, y) -> np.ndarray:
    s = interior_slacks(P, y)
    return P.A.T @ (P.A / (s**2)[:, None])


@dataclass(frozen=True)
class DikinAnchor:
    """H_c = hess phi(c), frozen at an interior center c.

    Small problems keep the triangular factor of a pivoted QR of the scaled
    rows Diag(s^-1) A, so H_c = R^T R is never formed and slacks near the
    boundary do not square the conditioning. Larger ones solve with
    Jacobi-preconditioned CG against the matrix-free product.
    """

    center: np.ndarray
    A: np.ndarray
    inv_sq_slacks: np.ndarray
    triangular: Optional[np.ndarray] = field(default=None, repr=False)
    pivots: Optional[np.ndarray] = field(default=None, repr=False)
    jacobi: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def dense(self) -> bool:
        return self.triangular is not None

    def apply(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return self.A.T @ ((self.A @ v) * self.inv_sq_slacks)

    def matrix(self) -> np.ndarray:
        return self.A.T @ (self.A * self.inv_sq_slacks[:, None])

    def _half_solve(self, w: np.ndarray) -> np.ndarray:
        # R^-T applied to the pivoted right-hand side
        return scipy.linalg.solve_triangular(self.triangular, w[self.pivots], trans="T")

    def solve(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if not np.any(w):
            return np.zeros_like(w)
        if self.triangular is not None:
            v = np.empty_like(w)
            v[self.pivots] = scipy.linalg.solve_triangular(self.triangular, self._half_solve(w))
            return v
        d = w.size
        operator = scipy.sparse.linalg.LinearOperator((d, d), matvec=self.apply, dtype=float)
        preconditioner = scipy.sparse.linalg.LinearOperator((d, d), matvec=lambda r: r / self.jacobi, dtype=float)
        v, info = scipy.sparse.linalg.cg(operator, w, rtol=SOLVE_TOL, atol=0.0, maxiter=10 * d, M=preconditioner)
        residual = float(np.linalg.norm(self.apply(v) - w) / np.linalg.norm(w))
        if info != 0:
            raise ConvergenceFailure("anchored PCG solve did not converge", iterations=10 * d, residual=residual)
        logger.debug("anchored PCG solve: relative residual %.2e", residual)
        return v

    def dual_norm(self, w) -> float:
        w = np.asarray(w, dtype=float)
        if self.triangular is not None:
            return float(np.linalg.norm(self._half_solve(w)))
        return float(np.sqrt(max(float(w @ self.solve(w)), 0.0)))


def make_anchor(P: Polytope, c, dense_threshold: int = DENSE_THRESHOLD) -> DikinAnchor:
    s = interior_slacks(P, c)
    center = _as_point(P, c).copy()
    center.setflags(write=False)
    inv_sq = 1.0 / s**2
    if P.d <= dense_threshold:
        B = P.A / s[:, None]
        # largest rows first keeps the pivoted QR accurate under badly scaled rows
        B = B[np.argsort(-np.abs(B).max(axis=1), kind="stable")]
        R, pivots = scipy.linalg.qr(B, mode="economic", pivoting=True)[1:]
        diag = np.abs(np.diag(R))
        if diag.min() <= np.finfo(float).eps * max(B.shape) * diag.max():
            raise FactorizationFailure(f"barrier Hessian is numerically singular (pivot ratio {diag.min() / diag.max():.2e})")
        return DikinAnchor(center=center, A=P.A, inv_sq_slacks=inv_sq, triangular=R, pivots=pivots)
    jacobi = (P.A**2).T @ inv_sq
    if np.any(jacobi <= 0):
        raise FactorizationFailure("barrier Hessian has a zero diagonal entry")
    return DikinAnchor(center=center, A=P.A, inv_sq_slacks=inv_sq, jacobi=jacobi)


def anchor_solve(anchor: DikinAnchor, w) -> np.ndarray:
    return anchor.solve(w)


def dikin_norm(anchor: DikinAnchor, u) -> float:
    u = np.asarray(u, dtype=float)
    return float(np.sqrt(max(float(u @ anchor.apply(u)), 0.0)))


def dikin_dual_norm(anchor: DikinAnchor, w) -> float:
    return anchor.dual_norm(w)


@dataclass(frozen=True)
class MetricBounds:
    r: float
    lower: float
    upper: float
    valid: bool


def metric_comparison_bounds(P: Polytope, y1, y2) -> MetricBounds:
    """Spectral sandwich (1-r)^2 H(y1) <= H(y2) <= (1-r)^-2 H(y1), r = ||y2 - y1||_{y1}."""
    interior_slacks(P, y2)
    anchor = make_anchor(P, y1)
    r = dikin_norm(anchor, _as_point(P, y2) - _as_point(P, y1))
    if r >= 1.0:
        return MetricBounds(r=r, lower=0.0, upper=float("inf"), valid=False)
    return MetricBounds(r=r, lower=(1.0 - r) ** 2, upper=(1.0 - r) ** -2, valid=True)


def euclidean_dikin_kappa(P: Polytope) -> float:
    """kappa = max{1, lambda_min(A^T Diag(sbar^-2) A)^(-1/2)}, so ||u||_2 <= kappa ||u||_y."""
    if P.slack_upper_bounds is None:
        raise MissingBounds("euclidean_dikin_kappa needs slack_upper_bounds")
    M = P.A.T @ (P.A / (P.slack_upper_bounds**2)[:, None])
    lam_min = float(scipy.linalg.eigvalsh(M, subset_by_index=[0, 0])[0])
    if lam_min <= 0:
        raise FactorizationFailure("slack-bound metric is singular")
    return max(1.0, lam_min**-0.5)
