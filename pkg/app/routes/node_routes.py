from fastapi import APIRouter, Depends, Query

from app.auth.dependencies import get_node_service
from app.core.errors import EdgeLedgerError
from app.dto.dtos import Acknowledgment, ChainPage, DepartureDocument, NodeRepresentation
from app.routes.helpers import http_error, parse_node_id
from app.services.node_service import MAX_CHAIN_PAGE, NodeService

router = APIRouter()


@router.get("/node", response_model=NodeRepresentation, summary="Representation of this node")
def get_node(service: NodeService = Depends(get_node_service)):
    """Identity, current score, chain head, peers and connection statistics"""
    return service.representation()


@router.delete("/node/{node_id}", response_model=Acknowledgment, summary="Remove a node that leaves gracefully")
def delete_node(node_id: str, departure: DepartureDocument, service: NodeService = Depends(get_node_service)):
    """The body is the departing node's own signed notice"""
    target = parse_node_id(node_id)
    try:
        service.depart(target, departure.to_departure())
    except (EdgeLedgerError, ValueError) as exc:
        raise http_error(exc)
    return Acknowledgment(status="removed", detail=f"{target.hex()} left at {departure.departed_at}")


@router.get("/chain", response_model=ChainPage, summary="Accepted blocks, for peers catching up")
def get_chain(
    start: int = Query(0, ge=0),
    limit: int = Query(MAX_CHAIN_PAGE, ge=1, le=MAX_CHAIN_PAGE),
    service: NodeService = Depends(get_node_service),
):
    return service.chain_page(start, limit)
