from fastapi import APIRouter, Depends, status

from app.auth.dependencies import get_node_service
from app.core.errors import EdgeLedgerError
from app.dto.dtos import Acknowledgment, AppDocument, AppsResponse
from app.routes.helpers import http_error
from app.services.node_service import NodeService

router = APIRouter(prefix="/apps")


@router.post("", response_model=Acknowledgment, status_code=status.HTTP_202_ACCEPTED, summary="Queue an app for placement")
def submit_app(document: AppDocument, service: NodeService = Depends(get_node_service)):
    try:
        service.submit_app(document.to_descriptor())
    except (EdgeLedgerError, ValueError) as exc:
        raise http_error(exc)
    return Acknowledgment(status="queued", detail=document.app_id)


@router.get("", response_model=AppsResponse, summary="Apps running here and apps waiting for admission")
def list_apps(service: NodeService = Depends(get_node_service)):
    return service.apps()
