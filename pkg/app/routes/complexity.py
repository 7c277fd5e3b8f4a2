import logging

from fastapi import APIRouter, HTTPException, Query, status

from app.core.errors import DomainError
from app.schemas.responses import ComplexityResponse
from app.services.saddle import sample_complexity

router = APIRouter(tags=["complexity"])
logger = logging.getLogger(__name__)


@router.get("/", response_model=ComplexityResponse)
async def get_complexity(
    epsilon: float = Query(..., description="Target gap"),
    delta: float = Query(..., description="Failure probability, in (0, 1)"),
    alpha0: float = Query(..., description="Step-size scale"),
    c: float = Query(..., description="Bound on the stochastic gradient norms"),
):
    """Iterations required for an epsilon-saddle point with probability 1 - delta"""
    try:
        estimate = sample_complexity(epsilon, delta, alpha0, c)
        return ComplexityResponse(
            epsilon=epsilon,
            delta=delta,
            alpha0=alpha0,
            c=c,
            omega_1=estimate.omega_1,
            omega_2=estimate.omega_2,
            t_required=estimate.t_required,
        )
    except DomainError as e:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))
    except Exception as e:
        logger.error(f"Error evaluating sample complexity: {str(e)}", exc_info=True)
        raise HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail="An error occurred while evaluating the sample complexity."
        )
