import json
import logging
import uuid
from pathlib import Path

from fastapi import APIRouter, Depends, HTTPException, status
from sqlalchemy.orm import Session

from app.core.dependencies import domain_http_error, get_output_dir
from app.core.errors import DgtdError
from app.database import get_db
from app.models.experiment_runs import ExperimentRun
from app.schemas.experiment import ExperimentSpec
from app.schemas.responses import ExperimentDetailResponse, ExperimentRunResponse
from app.services.experiments import record_experiment, run_experiment

router = APIRouter(tags=["experiments"])
logger = logging.getLogger(__name__)


def _detail(run: ExperimentRun) -> ExperimentDetailResponse:
    response = ExperimentDetailResponse.model_validate(run)
    response.summary = json.loads(run.summary_json)
    return response


@router.post("/", response_model=ExperimentDetailResponse, status_code=status.HTTP_201_CREATED)
def create_experiment(
    spec: ExperimentSpec,
    db: Session = Depends(get_db),
    output_dir: Path = Depends(get_output_dir),
):
    """Run an experiment synchronously and store it in the registry"""
    try:
        out_dir = output_dir / f"api_{uuid.uuid4().hex[:12]}"
        logger.info(f"=== POST /experiments: {len(spec.seeds)} seed(s), output in {out_dir} ===")
        report = run_experiment(spec, out_dir=out_dir)
        experiment = record_experiment(db, spec, report)
        return _detail(experiment)
    except DgtdError as e:
        db.rollback()
        logger.error(f"Experiment rejected: {str(e)}")
        raise domain_http_error(e)
    except Exception as e:
        db.rollback()
        logger.error(f"Unexpected error running experiment: {str(e)}", exc_info=True)
        raise HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail="An unexpected error occurred while running the experiment."
        )


@router.get("/", response_model=dict)
async def list_experiments(
    skip: int = 0,
    limit: int = 100,
    scenario: str = None,
    db: Session = Depends(get_db),
):
    """Registry listing with pagination, newest first"""
    try:
        query = db.query(ExperimentRun)
        if scenario:
            query = query.filter(ExperimentRun.scenario == scenario)
        total = query.count()
        runs = query.order_by(ExperimentRun.id.desc()).offset(skip).limit(limit).all()
        logger.info(f"Returning {len(runs)} of {total} experiment runs")
        return {
            "items": [ExperimentRunResponse.model_validate(run).model_dump() for run in runs],
            "total": total,
            "skip": skip,
            "limit": limit,
        }
    except Exception as e:
        logger.error(f"Error fetching experiment runs: {str(e)}", exc_info=True)
        raise HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail="An error occurred while loading experiment runs."
        )


@router.get("/{run_id}", response_model=ExperimentDetailResponse)
async def get_experiment(run_id: int, db: Session = Depends(get_db)):
    try:
        run = db.query(ExperimentRun).filter(ExperimentRun.id == run_id).first()
        if not run:
            raise HTTPException(
                status_code=status.HTTP_404_NOT_FOUND,
                detail=f"Experiment run {run_id} not found"
            )
        return _detail(run)
    except HTTPException:
        raise
    except Exception as e:
        logger.error(f"Error fetching experiment run {run_id}: {str(e)}", exc_info=True)
        raise HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail="An error occurred while loading the experiment run."
        )
