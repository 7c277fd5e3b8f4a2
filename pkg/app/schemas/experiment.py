from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.schemas.run import RewardNoise, StepSizeSchedule


class MdpSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    transition: List[List[float]] = Field(..., description="Row-stochastic |S| x |S| matrix, row-major")
    agent_rewards: List[List[float]] = Field(..., description="One state-indexed expected reward row per agent")
    sigma: float = Field(..., gt=0, description="Reward bound")
    gamma: float = Field(..., gt=0, lt=1, description="Discount factor")


class FeatureSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    phi: List[List[float]] = Field(..., description="|S| x q feature matrix, row-major")


class MixtureComponent(BaseModel):
    model_config = ConfigDict(extra="forbid")

    weight: float = Field(..., ge=0)
    edges: List[Tuple[int, int]] = Field(default_factory=list)


class GraphSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    num_agents: int = Field(..., ge=1)
    edges: Optional[List[List[float]]] = Field(None, description="[i, j] or [i, j, p] per base edge")
    edge_list_file: Optional[str] = Field(None, description="Text file with one 'i j p' line per edge")
    mixture: Optional[List[MixtureComponent]] = None

    @model_validator(mode="after")
    def check_single_source(self):
        given = [x for x in (self.edges, self.edge_list_file, self.mixture) if x is not None]
        if len(given) > 1:
            raise ValueError("give only one of edges, edge_list_file or mixture")
        return self


class ScenarioSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    preset: Optional[str] = Field(None, description="chain4, gridworld, single-agent or toy2x2")
    mdp: Optional[MdpSpec] = None
    features: Optional[FeatureSpec] = None
    graph: Optional[GraphSpec] = None
    grid_shape: Optional[Tuple[int, int]] = None

    @model_validator(mode="after")
    def check_resolvable(self):
        if self.preset is None and (self.mdp is None or self.features is None or self.graph is None):
            raise ValueError("scenario needs a preset or all of mdp, features and graph")
        return self


class RunSpec(BaseModel):
    """RunConfig fields without the seed; omitted fields come from the preset"""
    model_config = ConfigDict(extra="forbid")

    total_iterations: Optional[int] = Field(None, ge=1)
    kappa: Optional[float] = Field(None, ge=0)
    rho: Optional[float] = Field(None, ge=0)
    schedule: Optional[StepSizeSchedule] = None
    reward_noise: Optional[RewardNoise] = None
    reward_attribution: Optional[Literal["source", "destination"]] = None
    independent_states: Optional[bool] = None
    output: Optional[Literal["averaged", "last", "both"]] = None
    record_every: Optional[int] = Field(None, ge=1)
    average_from: Optional[float] = Field(None, ge=0, lt=1)


class BoxSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    safety_factor: float = Field(2.0, gt=0)
    margin: float = Field(1.0, ge=0)
    c_v: Optional[float] = Field(None, ge=0)
    radius_theta: Optional[float] = Field(None, gt=0)
    radius_v: Optional[float] = Field(None, gt=0)
    radius_mu: Optional[float] = Field(None, gt=0)
    radius_w: Optional[float] = Field(None, gt=0)
    enforce_audit: bool = True


class ReportSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    trace_csv: bool = True
    summary_json: bool = True
    complexity_table: bool = True
    heatmaps: bool = True
    epsilon: float = Field(0.1, gt=0)
    delta: float = Field(0.1, gt=0, lt=1)


class AcceptanceSpec(BaseModel):
    """Thresholds relative to 1 + ||w*||_inf where they concern w"""
    model_config = ConfigDict(extra="forbid")

    max_block_spread: Optional[float] = Field(None, ge=0)
    max_w_error: Optional[float] = Field(None, ge=0)
    max_mean_w_error: Optional[float] = Field(None, ge=0, description="Error of the seed-averaged final w")
    max_final_gap_proxy: Optional[float] = None
    min_pass_fraction: float = Field(1.0, ge=0, le=1)
    require_consensus_decrease: bool = False
    evaluate_on: Literal["averaged", "last"] = "averaged"


class ExperimentSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    scenario: ScenarioSpec
    run: RunSpec = Field(default_factory=RunSpec)
    boxes: BoxSpec = Field(default_factory=BoxSpec)
    seeds: List[int] = Field(..., min_length=1)
    report: ReportSpec = Field(default_factory=ReportSpec)
    acceptance: Optional[AcceptanceSpec] = None

    @field_validator("seeds")
    @classmethod
    def check_seeds(cls, seeds: List[int]) -> List[int]:
        for seed in seeds:
            if not 0 <= seed < 2**64:
                raise ValueError(f"seed {seed} is not a 64-bit unsigned integer")
        return seeds
