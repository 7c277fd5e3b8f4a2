import math
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class StepSizeSchedule(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["inverse-sqrt", "robbins-monro", "constant"] = Field(
        "inverse-sqrt", description="alpha0/sqrt(k+beta), alpha0/(k+beta) or alpha0"
    )
    alpha0: float = Field(..., gt=0, description="Step-size scale alpha_0")
    beta: float = Field(1.0, ge=0, description="Offset beta, ignored for constant steps")

    @model_validator(mode="after")
    def check_offset(self):
        if self.kind != "constant" and self.beta <= 0:
            raise ValueError("decaying step sizes need beta > 0 so that alpha_0 is finite")
        return self

    def step(self, k: int) -> float:
        if self.kind == "inverse-sqrt":
            return self.alpha0 / math.sqrt(k + self.beta)
        if self.kind == "robbins-monro":
            return self.alpha0 / (k + self.beta)
        return self.alpha0


class RewardNoise(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["none", "bounded-uniform"] = "none"
    half_width: float = Field(0.0, ge=0, description="Uniform noise half-width before clamping to [0, sigma]")


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    total_iterations: int = Field(..., ge=1, description="Number of iterations T")
    kappa: float = Field(1.0, ge=0, description="Consensus acceleration weight")
    rho: float = Field(0.0, ge=0, description="Strong convexification weight")
    schedule: StepSizeSchedule
    seed: int = Field(0, ge=0, lt=2**64, description="64-bit seed of the run's random source")
    reward_noise: RewardNoise = Field(default_factory=RewardNoise)
    reward_attribution: Literal["source", "destination"] = "source"
    independent_states: bool = Field(False, description="Per-agent transition draws instead of a common one")
    output: Literal["averaged", "last", "both"] = "averaged"
    record_every: Optional[int] = Field(None, ge=1, description="Record stride; automatic when omitted")
    keep_history: bool = Field(False, description="Keep every iterate, for short verification runs")
    average_from: float = Field(
        0.0, ge=0, lt=1, description="Fraction of T skipped before averaging starts; 0 averages the whole run"
    )
