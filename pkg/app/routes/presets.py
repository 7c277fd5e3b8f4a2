import logging
from typing import List

from fastapi import APIRouter, Depends, HTTPException, status

from app.core.dependencies import domain_http_error, get_scenario
from app.core.errors import DgtdError
from app.schemas.responses import CertificateCheck, PresetInfo, PresetSolution
from app.services.comm_graph import mean_graph_summary
from app.services.oracle import run_oracle_suite
from app.services.presets import Scenario, preset, preset_names
from app.services.saddle import build_saddle_problem, saddle_point, solution_bounds

router = APIRouter(tags=["presets"])
logger = logging.getLogger(__name__)


def _preset_info(scenario: Scenario) -> PresetInfo:
    return PresetInfo(
        name=scenario.name,
        description=scenario.description,
        num_states=scenario.model.num_states,
        num_agents=scenario.model.num_agents,
        num_features=scenario.features.q,
        gamma=scenario.model.gamma,
        algebraic_connectivity=mean_graph_summary(scenario.graph)["algebraic_connectivity"],
        run_defaults=scenario.run_defaults,
    )


@router.get("/", response_model=List[PresetInfo])
async def list_presets():
    """Names, sizes and run defaults of the built-in scenarios"""
    try:
        return [_preset_info(preset(name)) for name in preset_names()]
    except Exception as e:
        logger.error(f"Error listing presets: {str(e)}", exc_info=True)
        raise HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail="An error occurred while loading presets."
        )


@router.get("/{name}/solution", response_model=PresetSolution)
def get_preset_solution(
    agreement: bool = False,
    scenario: Scenario = Depends(get_scenario),
):
    """
    Exact saddle point, solution bounds and the KKT certificate of a preset.
    With agreement=true the dense and primal-dual oracles are run as well.
    """
    try:
        kappa = scenario.run_defaults.get("kappa", 0.0)
        problem = build_saddle_problem(scenario.model, scenario.features, scenario.graph, kappa=kappa)
        point = saddle_point(problem)
        bounds = solution_bounds(problem)
        report = run_oracle_suite(problem, scenario=scenario.name, include_agreement=agreement)
        logger.info(f"Solution for preset {scenario.name}: certificate {'passed' if report.passed else 'failed'}")
        return PresetSolution(
            name=scenario.name,
            w_star=point.w[0].tolist(),
            theta_star=point.theta.tolist(),
            mu_star=point.mu.tolist(),
            bounds={"theta": bounds.theta, "v": bounds.v, "mu": bounds.mu, "w": bounds.w},
            boxes={
                "theta": problem.boxes.radius_theta,
                "v": problem.boxes.radius_v,
                "mu": problem.boxes.radius_mu,
                "w": problem.boxes.radius_w,
            },
            certificate=[CertificateCheck(**check.__dict__) for check in report.checks],
        )
    except DgtdError as e:
        logger.error(f"Cannot solve preset {scenario.name}: {str(e)}")
        raise domain_http_error(e)
    except Exception as e:
        logger.error(f"Unexpected error solving preset {scenario.name}: {str(e)}", exc_info=True)
        raise HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail="An unexpected error occurred while solving the preset."
        )
