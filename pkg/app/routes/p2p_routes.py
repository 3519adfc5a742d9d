from fastapi import APIRouter, Depends, Request
from starlette.concurrency import run_in_threadpool

from app.auth.dependencies import get_node_service, get_sender
from app.core.errors import EdgeLedgerError
from app.core.types import NodeId
from app.dto.dtos import P2pAck
from app.routes.helpers import http_error
from app.services.node_service import NodeService

router = APIRouter()


@router.post("/p2p", response_model=P2pAck, summary="Peer-to-peer message in wire format", include_in_schema=False)
async def p2p(
    request: Request,
    sender: NodeId = Depends(get_sender),
    service: NodeService = Depends(get_node_service),
):
    data = await request.body()
    try:
        # the node lock may be held for a while, keep the event loop free
        accepted = await run_in_threadpool(service.receive, sender, data)
    except (EdgeLedgerError, ValueError) as exc:
        raise http_error(exc)
    return P2pAck(accepted=accepted)
