from datetime import datetime
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field


class PresetInfo(BaseModel):
    name: str
    description: str = ""
    num_states: int
    num_agents: int
    num_features: int
    gamma: float
    algebraic_connectivity: Optional[float] = Field(None, description="lambda_2 of the mean Laplacian; null for a single agent")
    run_defaults: Dict[str, Any] = Field(default_factory=dict)


class CertificateCheck(BaseModel):
    name: str
    passed: bool
    value: Optional[float] = None
    threshold: Optional[float] = None
    detail: str = ""


class PresetSolution(BaseModel):
    name: str
    w_star: List[float] = Field(..., description="Global GTD solution of the averaged reward")
    theta_star: List[List[float]]
    mu_star: List[List[float]]
    bounds: Dict[str, float] = Field(..., description="Sup-norm bounds on theta, v, mu and w")
    boxes: Dict[str, float] = Field(..., description="Constraint-box radii used by the sampler")
    certificate: List[CertificateCheck] = Field(default_factory=list)


class ComplexityResponse(BaseModel):
    epsilon: float
    delta: float
    alpha0: float
    c: float
    omega_1: float
    omega_2: float
    t_required: int


class SeedRunResponse(BaseModel):
    seed: str
    error: Optional[str] = None
    final_consensus_penalty: Optional[float] = None
    final_primal_error: Optional[float] = None
    final_gap_proxy: Optional[float] = None
    block_spread: Optional[float] = None
    w_error: Optional[float] = None
    empirical_c: Optional[float] = None

    model_config = ConfigDict(from_attributes=True)


class ExperimentRunResponse(BaseModel):
    id: int
    scenario: str
    total_iterations: int
    num_seeds: int
    passed: bool
    out_dir: str
    created_at: Optional[datetime] = None
    seeds: List[SeedRunResponse] = Field(default_factory=list)

    model_config = ConfigDict(from_attributes=True)


class ExperimentDetailResponse(ExperimentRunResponse):
    summary: Dict[str, Any] = Field(default_factory=dict)
