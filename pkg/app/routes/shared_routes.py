from fastapi import APIRouter, Depends, status

from app.auth.dependencies import get_node_service
from app.core.errors import EdgeLedgerError
from app.dto.dtos import Acknowledgment, ScoreDocument
from app.routes.helpers import http_error
from app.services.node_service import NodeService

router = APIRouter(prefix="/shared")


@router.put("", response_model=Acknowledgment, summary="Update the shared pool with a node's state")
def put_shared(document: ScoreDocument, service: NodeService = Depends(get_node_service)):
    """Same effect as receiving the score over gossip; older scores are acknowledged and ignored"""
    try:
        updated = service.put_score(document.to_score(), url=document.url)
    except (EdgeLedgerError, ValueError) as exc:
        raise http_error(exc)
    return Acknowledgment(status="updated" if updated else "unchanged")


@router.post(
    "",
    response_model=Acknowledgment,
    status_code=status.HTTP_201_CREATED,
    summary="Add a new node to the shared pool",
)
def post_shared(document: ScoreDocument, service: NodeService = Depends(get_node_service)):
    try:
        service.join(document.to_score(), url=document.url)
    except (EdgeLedgerError, ValueError) as exc:
        raise http_error(exc)
    return Acknowledgment(status="joined", detail=document.node)
