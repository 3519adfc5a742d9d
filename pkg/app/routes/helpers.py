from fastapi import HTTPException, status

from app.core.errors import (
    AuthenticationError,
    AuthorizationError,
    ConflictError,
    EncodingError,
    UnknownNodeError,
)
from app.core.types import NodeId

_STATUS = (
    (AuthenticationError, status.HTTP_401_UNAUTHORIZED),
    (AuthorizationError, status.HTTP_403_FORBIDDEN),
    (UnknownNodeError, status.HTTP_404_NOT_FOUND),
    (ConflictError, status.HTTP_409_CONFLICT),
    (EncodingError, status.HTTP_422_UNPROCESSABLE_ENTITY),
    (ValueError, status.HTTP_422_UNPROCESSABLE_ENTITY),
)


def http_error(exc: Exception) -> HTTPException:
    """Map a domain error onto its HTTP status; anything unmapped is a 500"""
    for kind, code in _STATUS:
        if isinstance(exc, kind):
            return HTTPException(status_code=code, detail=str(exc))
    return HTTPException(status_code=status.HTTP_500_INTERNAL_SERVER_ERROR, detail=f"{type(exc).__name__}: {exc}")


def parse_node_id(text: str) -> NodeId:
    try:
        return NodeId.from_hex(text)
    except ValueError:
        raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=f"{text!r} is not a node id")
