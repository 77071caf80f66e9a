from __future__ import annotations

from typing import List, Literal, Optional

from pydantic import BaseModel, Field, NonNegativeFloat, PositiveFloat, model_validator

from models.polytope import PolytopeDocument
from models.schedule import CertificationSettings, DeclaredConstantsModel, ProjectionBoxModel, ScheduleConfig
from services.hexagon import DEFAULT_VERTICES, HexagonConfig


class HexagonSettings(BaseModel):
    vertices: List[List[float]] = Field(
        default_factory=lambda: [list(v) for v in DEFAULT_VERTICES],
        description="Counter-clockwise vertices of the hexagon.",
    )
    Q: List[List[float]] = Field(
        default_factory=lambda: [[1.2, 0.15], [0.15, 0.8]],
        description="SPD curvature of the lower objective.",
    )
    mu: PositiveFloat = Field(5e-4, description="Barrier parameter.")
    c_start: List[float] = Field(default_factory=lambda: [0.0, 0.0], description="Lower-level target at x = 0.")
    c_end: List[float] = Field(default_factory=lambda: [2.2, 0.3], description="Lower-level target at x = 1.")
    K: int = Field(2000, ge=2, description="Number of grid points on [0, 1].")
    T: int = Field(30, ge=1, description="Tracker steps per grid point.")
    eta: float = Field(0.25, gt=0, lt=0.5, description="Dikin tube radius.")
    gamma_euclidean_factor: PositiveFloat = Field(0.7, description="Euclidean step as a multiple of gamma_crit(0).")
    gamma_barrier_factor: PositiveFloat = Field(0.5, description="Barrier step as a multiple of 1/l_psi1 at the anchor.")

    def to_config(self) -> HexagonConfig:
        return HexagonConfig(
            vertices=tuple(tuple(v) for v in self.vertices),
            Q=tuple(tuple(r) for r in self.Q),
            mu=self.mu,
            c_start=tuple(self.c_start),
            c_end=tuple(self.c_end),
            K=self.K,
            T=self.T,
            eta=self.eta,
            gamma_euclidean_factor=self.gamma_euclidean_factor,
            gamma_barrier_factor=self.gamma_barrier_factor,
        )


class TollSettings(BaseModel):
    n: int = Field(50, ge=10, description="Corridors; the instance seeds come from ExperimentConfig.seeds.")
    tau: float = Field(0.2, gt=0, le=1, description="Bottleneck tightness.")
    reference_pool: bool = Field(False, description="Compute F_ref and the normalized gap after the run.")
    hypergradient_iterations: Optional[int] = Field(
        None, ge=1, description="Budget of the exact-hypergradient reference run; defaults to 50 K."
    )
    long_run_factor: int = Field(4, ge=0, description="Length of the BMFO reference run, in multiples of K; 0 disables it.")


class NoiseSettings(BaseModel):
    radius_x: NonNegativeFloat = Field(0.1, description="Radius of the uniform-ball noise on grad_x f.")
    radius_y: NonNegativeFloat = Field(0.1, description="Radius of the uniform-ball noise on grad_y f.")


class QuadraticInstanceModel(BaseModel):
    """f = 1/2 (y - c_f)^T Q_f (y - c_f), g = 1/2 (y - M x - c0)^T Q_g (y - M x - c0) on a polytope."""

    polytope: PolytopeDocument
    Q_f: List[List[float]]
    c_f: List[float]
    Q_g: List[List[float]]
    M: List[List[float]] = Field(..., description="dim_y x dim_x coupling of the lower target.")
    c0: List[float]
    declared: Optional[DeclaredConstantsModel] = None
    noise: Optional[NoiseSettings] = Field(None, description="Makes the upper oracles stochastic; seeds drive the noise.")


class DiagnosticsFlags(BaseModel):
    tube: bool = False
    bias: bool = False
    stationarity: bool = False
    proxy_bias: bool = False
    stride: int = Field(1, ge=1, description="Evaluate the trace-based diagnostics every stride records.")
    mu_list: List[PositiveFloat] = Field(default_factory=lambda: [1e-2, 1e-3, 1e-4, 1e-5, 1e-6])
    lambda_list: List[PositiveFloat] = Field(default_factory=lambda: [10.0, 100.0, 1000.0, 10000.0])


class ExperimentConfig(BaseModel):
    experiment: Literal["hexagon", "toll", "custom"] = Field(
        ...,
        description="Which instance family to run.",
        json_schema_extra={"example": "toll"},
    )
    hexagon: Optional[HexagonSettings] = None
    toll: Optional[TollSettings] = None
    custom: Optional[QuadraticInstanceModel] = None
    schedule: ScheduleConfig = Field(default_factory=lambda: ScheduleConfig(alpha0=1e-3, gamma0=0.05, lambda0=50.0))
    K: int = Field(500, ge=0, description="Outer iterations (and certification horizon).")
    x0: Optional[List[float]] = Field(None, description="Initial upper variable; toll defaults to the instance x0.")
    projection: Optional[ProjectionBoxModel] = Field(None, description="Post-step clamp of x; off by default.")
    seeds: List[int] = Field(default_factory=lambda: [0], min_length=1)
    output_dir: str = Field("out", description="Directory for traces and reports.")
    diagnostics: DiagnosticsFlags = Field(default_factory=DiagnosticsFlags)
    certification: CertificationSettings = Field(default_factory=CertificationSettings)

    model_config = {
        "json_schema_extra": {
            "examples": [
                {
                    "experiment": "toll",
                    "toll": {"n": 50, "tau": 0.2},
                    "schedule": {"kind": "deterministic_polynomial", "alpha0": 0.001, "gamma0": 0.05,
                                 "lambda0": 50.0, "k0": 1.0, "xi": 20.0, "T": 10, "eta": 0.25, "mu": 0.001},
                    "K": 500,
                    "projection": {"lower": 0.0, "upper": 10.0},
                    "seeds": [0],
                    "output_dir": "out/toll",
                }
            ]
        }
    }

    @model_validator(mode="after")
    def _section_matches(self) -> "ExperimentConfig":
        if self.experiment == "hexagon" and self.hexagon is None:
            self.hexagon = HexagonSettings()
        if self.experiment == "toll" and self.toll is None:
            self.toll = TollSettings()
        if self.experiment == "custom":
            if self.custom is None:
                raise ValueError("experiment 'custom' needs a custom section")
            if self.x0 is None:
                raise ValueError("experiment 'custom' needs x0")
        return self
