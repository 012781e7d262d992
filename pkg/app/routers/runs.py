from typing import List, Optional

from fastapi import APIRouter, Depends, HTTPException, status

from app.core.config import settings
from app.core.errors import IncompleteRun, PipelineError
from app.schemas import FrequencyRow, MetricsReport, RunSummary
from app.services.run_service import RunService

router = APIRouter(prefix=f"{settings.API_PREFIX}/runs", tags=["runs"])


def get_run_service() -> RunService:
    return RunService(settings.RUNS_ROOT)


def _http_error(e: PipelineError) -> HTTPException:
    code = status.HTTP_404_NOT_FOUND if isinstance(e, IncompleteRun) else status.HTTP_400_BAD_REQUEST
    return HTTPException(status_code=code, detail=e.to_response().model_dump())


@router.get("", response_model=List[RunSummary])
async def list_runs(service: RunService = Depends(get_run_service)):
    """Runs under RUNS_ROOT that have a manifest, with their completed stages."""
    return service.list_runs()


@router.get("/{run_id}/metrics", response_model=List[MetricsReport])
async def get_run_metrics(run_id: str, service: RunService = Depends(get_run_service)):
    try:
        return service.get_metrics(run_id)
    except PipelineError as e:
        raise _http_error(e)


@router.get("/{run_id}/top-rois", response_model=List[FrequencyRow])
async def get_top_rois(
    run_id: str,
    network: Optional[str] = None,
    limit: int = 10,
    service: RunService = Depends(get_run_service),
):
    """
    Top-ROI frequency table of a run, `limit` rows per network and class.
    """
    try:
        return service.get_top_rois(run_id, network, limit)
    except PipelineError as e:
        raise _http_error(e)
