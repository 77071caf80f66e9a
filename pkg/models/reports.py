from __future__ import annotations

import math
from typing import List, Optional

from pydantic import BaseModel, Field


def margin_label(passed: bool, margin: float) -> str:
    shown = "∞" if math.isinf(margin) else f"{margin:.4g}"
    return f"{'pass' if passed else 'fail'}({shown})"


class ConditionResult(BaseModel):
    name: str = Field(
        ...,
        description="Condition identifier, e.g. 'S1:gamma-cap'.",
        json_schema_extra={"example": "S1:gamma-cap"},
    )
    condition: str = Field(
        ...,
        description="Human-readable inequality that was evaluated.",
        json_schema_extra={"example": "gamma_k <= min{1/(4 l_psi1), 1/(4 T rho_psi)}"},
    )
    passed: bool = Field(..., description="True when the inequality holds for every checked k.")
    first_violation: Optional[int] = Field(
        None,
        description="First k at which the inequality fails (0 for k-independent conditions).",
        json_schema_extra={"example": 0},
    )
    margin: float = Field(
        ...,
        description="Smallest ratio rhs/lhs over the checked range; infinite when lhs is 0.",
        json_schema_extra={"example": 1.75},
    )
    conditional: bool = Field(
        False,
        description="True when the result depends on an absolute constant chosen by convention (c_xi).",
    )

    model_config = {"ser_json_inf_nan": "strings"}

    @property
    def label(self) -> str:
        return margin_label(self.passed, self.margin)


class CertificationReport(BaseModel):
    """Per-condition outcome of the barrier-aware schedule check for k < K."""

    K: int = Field(..., description="Number of outer iterations checked.", json_schema_extra={"example": 500})
    passed: bool = Field(..., description="True iff every condition passes.")
    conditions: List[ConditionResult] = Field(default_factory=list)
    c_xi: float = Field(0.01, description="Absolute constant used in the last tube-closure term.")
    conservative_defaults: List[str] = Field(
        default_factory=list,
        description="Constants that took a conservative default instead of a supplied value.",
        json_schema_extra={"example": ["l_psi2", "l_f2_eta", "l_star1"]},
    )

    model_config = {
        "ser_json_inf_nan": "strings",
        "json_schema_extra": {
            "examples": [
                {
                    "K": 500,
                    "passed": False,
                    "conditions": [
                        {
                            "name": "S1:gamma-cap",
                            "condition": "gamma_k <= min{1/(4 l_psi1), 1/(4 T rho_psi)}",
                            "passed": False,
                            "first_violation": 0,
                            "margin": 0.25,
                            "conditional": False,
                        }
                    ],
                    "c_xi": 0.01,
                    "conservative_defaults": ["l_psi2"],
                }
            ]
        },
    }

    def failed(self) -> List[ConditionResult]:
        return [c for c in self.conditions if not c.passed]

    def table(self) -> str:
        lines = [f"{'condition':<16} {'result':<16} {'first_k':>8}  inequality"]
        for c in self.conditions:
            first = "-" if c.first_violation is None else str(c.first_violation)
            mark = c.label + (" *" if c.conditional else "")
            lines.append(f"{c.name:<16} {mark:<16} {first:>8}  {c.condition}")
        lines.append(f"overall: {'CERTIFIED' if self.passed else 'NOT CERTIFIED'} for k < {self.K}")
        if any(c.conditional for c in self.conditions):
            lines.append(f"* conditional on c_xi = {self.c_xi}")
        if self.conservative_defaults:
            lines.append("conservative defaults: " + ", ".join(self.conservative_defaults))
        return "\n".join(lines)
