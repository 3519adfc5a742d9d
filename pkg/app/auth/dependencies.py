from fastapi import Header, HTTPException, Request, status

from app.core.types import NodeId
from app.services.node_service import NodeService
from app.services.transport import NODE_ID_HEADER


def get_node_service(request: Request) -> NodeService:
    """The node hosted by this app"""
    service = getattr(request.app.state, "node", None)
    if service is None:
        raise HTTPException(status_code=status.HTTP_503_SERVICE_UNAVAILABLE, detail="node not started")
    return service


def get_sender(x_node_id: str = Header(..., alias=NODE_ID_HEADER)) -> NodeId:
    """Peer id claimed by a p2p request; the messages themselves carry the signatures"""
    try:
        return NodeId.from_hex(x_node_id)
    except ValueError:
        raise HTTPException(
            status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
            detail=f"{NODE_ID_HEADER} must be a hex node id",
        )
