from __future__ import annotations

from datetime import datetime
from typing import List
from uuid import UUID, uuid4

import numpy as np
from pydantic import BaseModel, Field

from services.toll import TollInstance


class TollInstanceBase(BaseModel):
    n: int = Field(
        ...,
        ge=10,
        le=5000,
        description="Number of corridors (dimension of both tolls and flows).",
        json_schema_extra={"example": 50},
    )
    seed: int = Field(..., ge=0, description="Seed of numpy.random.default_rng.", json_schema_extra={"example": 0})
    tau: float = Field(
        0.2,
        gt=0,
        le=1,
        description="Bottleneck tightness; 1.0 is the loose variant.",
        json_schema_extra={"example": 0.2},
    )

    model_config = {
        "json_schema_extra": {
            "examples": [
                {"n": 50, "seed": 0, "tau": 0.2},
            ]
        }
    }


class TollInstanceCreate(TollInstanceBase):
    """Creation payload: the generator parameters only; the instance is sampled server-side."""
    model_config = {
        "json_schema_extra": {
            "examples": [
                {"n": 50, "seed": 0, "tau": 0.2},
                {"n": 100, "seed": 7, "tau": 1.0},
            ]
        }
    }


class TollInstanceRead(TollInstanceBase):
    """Fully materialized instance; matrices are row-major nested lists."""

    id: UUID = Field(
        default_factory=uuid4,
        description="Server-generated instance ID.",
        json_schema_extra={"example": "99999999-9999-4999-8999-999999999999"},
    )
    created_at: datetime = Field(
        default_factory=datetime.utcnow,
        description="Creation timestamp (UTC).",
        json_schema_extra={"example": "2025-01-15T10:20:30Z"},
    )
    m_b: int = Field(..., description="Number of shared bottlenecks, max(5, n // 10).", json_schema_extra={"example": 5})
    C: List[List[float]] = Field(..., description="Bottleneck-corridor incidence (m_b x n, 0/1).")
    u: List[float] = Field(..., description="Corridor capacities.")
    ell: List[float] = Field(..., description="Baseline travel costs.")
    q: List[float] = Field(..., description="Diagonal part of the congestion matrix.")
    d: List[float] = Field(..., description="Bottleneck capacities before the tau scaling.")
    V: List[List[float]] = Field(..., description="Low-rank congestion factor (n x 3).")
    D: float = Field(..., description="Total demand cap, 0.6 * sum(u).")
    R_tar: float = Field(..., description="Target revenue.")
    kappa: float = Field(..., description="Unmet-demand penalty in the follower objective.")
    beta: float = Field(..., description="Unmet-demand penalty in the leader objective.")
    rho_rev: float = Field(..., description="Revenue-tracking weight.")
    rho_x: float = Field(..., description="Toll regularization weight.")
    x0: List[float] = Field(..., description="Initial tolls.")
    y_int: List[float] = Field(..., description="Strictly feasible flow used as interior witness.")

    @classmethod
    def from_instance(cls, ti: TollInstance) -> "TollInstanceRead":
        return cls(
            n=ti.n, seed=ti.seed, tau=ti.tau, m_b=ti.m_b,
            C=ti.C.tolist(), u=ti.u.tolist(), ell=ti.ell.tolist(), q=ti.q.tolist(), d=ti.d.tolist(),
            V=ti.V.tolist(), D=ti.D, R_tar=ti.R_tar, kappa=ti.kappa, beta=ti.beta,
            rho_rev=ti.rho_rev, rho_x=ti.rho_x, x0=ti.x0.tolist(), y_int=ti.y_int.tolist(),
        )

    def to_instance(self) -> TollInstance:
        return TollInstance(
            n=self.n, seed=self.seed, tau=self.tau,
            C=np.array(self.C), u=np.array(self.u), ell=np.array(self.ell), q=np.array(self.q),
            d=np.array(self.d), V=np.array(self.V), D=self.D, R_tar=self.R_tar, kappa=self.kappa,
            beta=self.beta, rho_rev=self.rho_rev, rho_x=self.rho_x,
            x0=np.array(self.x0), y_int=np.array(self.y_int),
        )
