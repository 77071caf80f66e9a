from __future__ import annotations

from typing import List, Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator

from services.geometry import Polytope, box_polytope


class BoxSpec(BaseModel):
    lower: List[float] = Field(
        ...,
        description="Lower bounds, one per coordinate.",
        json_schema_extra={"example": [0.0, 0.0]},
    )
    upper: List[float] = Field(
        ...,
        description="Upper bounds, one per coordinate; strictly above lower.",
        json_schema_extra={"example": [1.0, 1.0]},
    )

    @model_validator(mode="after")
    def _check_bounds(self) -> "BoxSpec":
        if len(self.lower) != len(self.upper) or not self.lower:
            raise ValueError("lower and upper must be nonempty and of equal length")
        if any(u <= l for l, u in zip(self.lower, self.upper)):
            raise ValueError("upper must exceed lower in every coordinate")
        return self


class PolytopeDocument(BaseModel):
    """A polytope {y : A y <= b}, given either as a box or as explicit A, b and an interior witness."""

    box: Optional[BoxSpec] = Field(
        None,
        description="Box shorthand; excludes A/b.",
        json_schema_extra={"example": {"lower": [0.0, 0.0], "upper": [1.0, 1.0]}},
    )
    A: Optional[List[List[float]]] = Field(
        None,
        description="Constraint matrix, row-major, full column rank.",
        json_schema_extra={"example": [[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]]},
    )
    b: Optional[List[float]] = Field(
        None,
        description="Right-hand side, one entry per row of A.",
        json_schema_extra={"example": [1.0, 1.0, 0.0]},
    )
    interior_witness: Optional[List[float]] = Field(
        None,
        description="A strictly interior point; required with A/b, defaults to the box midpoint.",
        json_schema_extra={"example": [0.3, 0.3]},
    )
    slack_upper_bounds: Optional[List[float]] = Field(
        None,
        description="Per-row upper bounds on b - A y over the polytope; enables kappa.",
        json_schema_extra={"example": [1.0, 1.0, 2.0]},
    )

    model_config = {
        "json_schema_extra": {
            "examples": [
                {"box": {"lower": [0.0, 0.0, 0.0], "upper": [1.0, 1.0, 1.0]}},
                {
                    "A": [[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]],
                    "b": [1.0, 1.0, 0.0],
                    "interior_witness": [0.3, 0.3],
                    "slack_upper_bounds": [1.0, 1.0, 2.0],
                },
            ]
        }
    }

    @model_validator(mode="after")
    def _one_form(self) -> "PolytopeDocument":
        explicit = self.A is not None or self.b is not None
        if self.box is not None and explicit:
            raise ValueError("give either box or A/b, not both")
        if self.box is None:
            if self.A is None or self.b is None or self.interior_witness is None:
                raise ValueError("A, b and interior_witness are required without box")
        return self

    def to_polytope(self) -> Polytope:
        if self.box is not None:
            return box_polytope(self.box.lower, self.box.upper, interior_witness=self.interior_witness)
        return Polytope(
            A=np.array(self.A, dtype=float),
            b=np.array(self.b, dtype=float),
            interior_witness=np.array(self.interior_witness, dtype=float),
            slack_upper_bounds=None if self.slack_upper_bounds is None else np.array(self.slack_upper_bounds, dtype=float),
        )


class AnalyticCenterRead(BaseModel):
    center: List[float] = Field(
        ...,
        description="Minimizer of the log barrier over the polytope.",
        json_schema_extra={"example": [0.5, 0.5]},
    )
    stationarity_residual: float = Field(
        ...,
        description="Dikin dual norm of the barrier gradient at the returned center.",
        json_schema_extra={"example": 3.1e-12},
    )
    iterations: int = Field(..., description="Damped Newton iterations used.", json_schema_extra={"example": 6})
    kappa: Optional[float] = Field(
        None,
        description="Euclidean-Dikin conversion constant; present when slack upper bounds are known.",
        json_schema_extra={"example": 1.0},
    )
