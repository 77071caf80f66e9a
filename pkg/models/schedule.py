from __future__ import annotations

from typing import List, Literal, Optional

from pydantic import BaseModel, Field, PositiveFloat, model_validator

from services import bmfo
from services.problem import DeclaredConstants

ScheduleKind = Literal["deterministic_polynomial", "stochastic_polynomial", "explicit"]


class ScheduleConfig(BaseModel):
    """Step-size and penalty schedule of the outer loop.

    With certified=True the leading constants are ignored and rebuilt from the
    instance constants so that every barrier-aware condition holds.
    """

    kind: ScheduleKind = Field(
        "deterministic_polynomial",
        description="Schedule family.",
        json_schema_extra={"example": "deterministic_polynomial"},
    )
    alpha0: float = Field(0.0, ge=0, description="Leading constant of alpha_k.", json_schema_extra={"example": 0.001})
    gamma0: float = Field(0.0, ge=0, description="Leading constant of gamma_k.", json_schema_extra={"example": 0.05})
    lambda0: float = Field(0.0, ge=0, description="Initial penalty lambda_0.", json_schema_extra={"example": 50.0})
    k0: float = Field(1.0, gt=0, description="Index offset of the polynomial profile.", json_schema_extra={"example": 1.0})
    xi: float = Field(1.0, ge=0, description="Outer step multiplier; x moves by xi * alpha_k * q.", json_schema_extra={"example": 20.0})
    T: int = Field(1, ge=1, description="Inner tracker steps per outer iteration.", json_schema_extra={"example": 10})
    eta: float = Field(0.25, gt=0, lt=0.5, description="Dikin tube radius.", json_schema_extra={"example": 0.25})
    mu: PositiveFloat = Field(1e-3, description="Barrier parameter.", json_schema_extra={"example": 0.001})
    alphas: Optional[List[float]] = Field(None, description="Explicit alpha_k; the last entry repeats.")
    gammas: Optional[List[float]] = Field(None, description="Explicit gamma_k; the last entry repeats.")
    lambdas: Optional[List[float]] = Field(None, description="Explicit lambda_k, nondecreasing; the last entry repeats.")
    certified: bool = Field(False, description="Build the leading constants from the instance constants.")
    safety: float = Field(2.0, gt=1, description="Margin factor used when certified=True.")

    model_config = {
        "json_schema_extra": {
            "examples": [
                {
                    "kind": "deterministic_polynomial",
                    "alpha0": 0.001,
                    "gamma0": 0.05,
                    "lambda0": 50.0,
                    "k0": 1.0,
                    "xi": 20.0,
                    "T": 10,
                    "eta": 0.25,
                    "mu": 0.001,
                },
                {"kind": "explicit", "alphas": [0.01], "gammas": [0.1], "lambdas": [10.0, 10.0], "T": 5, "mu": 0.01},
            ]
        }
    }

    @model_validator(mode="after")
    def _check_kind(self) -> "ScheduleConfig":
        if self.kind == "explicit":
            if self.certified:
                raise ValueError("explicit schedules cannot be certified by construction")
            if not (self.alphas and self.gammas and self.lambdas):
                raise ValueError("explicit schedules need nonempty alphas, gammas and lambdas")
        elif not self.certified:
            for name in ("alpha0", "gamma0", "lambda0"):
                if not getattr(self, name) > 0:
                    raise ValueError(f"{name} must be positive for a polynomial schedule")
        return self

    def to_schedule(self, constants: Optional[bmfo.LocalConstants] = None) -> bmfo.Schedule:
        if self.certified:
            if constants is None:
                raise ValueError("a certified schedule needs local constants")
            return bmfo.certified_schedule(constants, self.kind, self.T, self.eta, self.mu, safety=self.safety)
        return bmfo.make_schedule(
            self.kind,
            alpha0=self.alpha0, gamma0=self.gamma0, lambda0=self.lambda0, k0=self.k0,
            xi=self.xi, T=self.T, eta=self.eta, mu=self.mu,
            alphas=self.alphas, gammas=self.gammas, lambdas=self.lambdas,
        )

    @classmethod
    def from_schedule(cls, schedule: bmfo.Schedule) -> "ScheduleConfig":
        return cls(
            kind=schedule.kind, alpha0=schedule.alpha0, gamma0=schedule.gamma0, lambda0=schedule.lambda0,
            k0=schedule.k0, xi=schedule.xi, T=schedule.T, eta=schedule.eta, mu=schedule.mu,
            alphas=None if schedule.alphas is None else list(schedule.alphas),
            gammas=None if schedule.gammas is None else list(schedule.gammas),
            lambdas=None if schedule.lambdas is None else list(schedule.lambdas),
        )


class ProjectionBoxModel(BaseModel):
    lower: float = Field(0.0, description="Lower clamp applied to every entry of x after each outer step.")
    upper: float = Field(10.0, description="Upper clamp applied to every entry of x after each outer step.")

    @model_validator(mode="after")
    def _ordered(self) -> "ProjectionBoxModel":
        if not self.upper > self.lower:
            raise ValueError("projection box needs upper > lower")
        return self

    def to_box(self) -> bmfo.ProjectionBox:
        return bmfo.ProjectionBox(lower=self.lower, upper=self.upper)


class DeclaredConstantsModel(BaseModel):
    l_g1: PositiveFloat = Field(..., description="Lipschitz constant of grad_y g in y.", json_schema_extra={"example": 2.0})
    l_f0: PositiveFloat = Field(..., description="Bound on ||grad_y f|| over the visited region.", json_schema_extra={"example": 1.0})
    l_f1: PositiveFloat = Field(..., description="Lipschitz constant of grad f.", json_schema_extra={"example": 2.0})
    l_g0: PositiveFloat = Field(..., description="Bound on ||grad_x g|| over the visited region.", json_schema_extra={"example": 1.0})

    def to_declared(self) -> DeclaredConstants:
        return DeclaredConstants(l_g1=self.l_g1, l_f0=self.l_f0, l_f1=self.l_f1, l_g0=self.l_g0)


class LocalConstantsModel(BaseModel):
    """Every constant the barrier-aware conditions read, supplied explicitly."""

    rho_psi: PositiveFloat
    l_psi1: PositiveFloat
    l_psi2: PositiveFloat
    l_f0: PositiveFloat
    l_f1: PositiveFloat
    l_g0: PositiveFloat
    l_g1: PositiveFloat
    l_f0_eta: PositiveFloat
    l_f1_eta: PositiveFloat
    l_f2_eta: PositiveFloat
    L_F: PositiveFloat
    c_x: PositiveFloat
    l_star0: PositiveFloat
    l_lambda0: PositiveFloat
    l_star1: PositiveFloat
    c_xi: PositiveFloat = 0.01

    def to_constants(self) -> bmfo.LocalConstants:
        return bmfo.LocalConstants(**self.model_dump())


class DerivedConstantsRequest(BaseModel):
    """Inputs from which the closed-form local constants are computed."""

    declared: DeclaredConstantsModel
    kappa: float = Field(1.0, ge=1, description="Euclidean-Dikin conversion constant.", json_schema_extra={"example": 1.0})
    l_psi2: Optional[PositiveFloat] = Field(None, description="Third-derivative constant; defaults conservatively.")
    l_f2_eta: Optional[PositiveFloat] = Field(None, description="Local second-derivative constant of f; defaults conservatively.")
    l_star1: Optional[PositiveFloat] = Field(None, description="Lipschitz constant of the center map; defaults conservatively.")
    c_xi: PositiveFloat = Field(0.01, description="Absolute constant of the last tube-closure term.")


class CertificationSettings(BaseModel):
    """Overrides for the constants the certify command derives from the configured instance."""

    kappa: Optional[float] = Field(None, ge=1, description="Replaces the kappa computed from the polytope.")
    l_psi2: Optional[PositiveFloat] = None
    l_f2_eta: Optional[PositiveFloat] = None
    l_star1: Optional[PositiveFloat] = None
    c_xi: PositiveFloat = 0.01
    constants: Optional[LocalConstantsModel] = Field(None, description="Full explicit constants; skips derivation.")


class CertificationRequest(BaseModel):
    schedule: ScheduleConfig
    K: int = Field(..., ge=0, le=1_000_000, description="Check the conditions for k < K.", json_schema_extra={"example": 500})
    constants: Optional[LocalConstantsModel] = Field(None, description="Explicit constants.")
    derived: Optional[DerivedConstantsRequest] = Field(None, description="Declared constants to derive from.")
    mu: Optional[PositiveFloat] = Field(None, description="Barrier parameter for derivation; defaults to schedule.mu.")

    model_config = {
        "json_schema_extra": {
            "examples": [
                {
                    "schedule": {"kind": "deterministic_polynomial", "alpha0": 0.001, "gamma0": 0.05, "lambda0": 50.0,
                                 "xi": 20.0, "T": 10, "mu": 0.001},
                    "K": 500,
                    "derived": {"declared": {"l_g1": 2.0, "l_f0": 1.0, "l_f1": 2.0, "l_g0": 1.0}, "kappa": 1.0},
                }
            ]
        }
    }

    @model_validator(mode="after")
    def _one_source(self) -> "CertificationRequest":
        if (self.constants is None) == (self.derived is None):
            raise ValueError("give exactly one of constants or derived")
        return self


class ScheduleTableRequest(BaseModel):
    schedule: ScheduleConfig
    K: int = Field(..., ge=1, le=100_000, description="Number of rows, k = 0..K-1.", json_schema_extra={"example": 5})


class ScheduleRow(BaseModel):
    k: int
    alpha: float
    gamma: float
    lam: float
    delta: float
    beta: float
