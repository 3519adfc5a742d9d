import base64
import binascii
from typing import Annotated, Dict, List, Optional

from pydantic import AfterValidator, BaseModel, Field

from app.core.types import (
    NODE_ID_SIZE,
    SIGNATURE_SIZE,
    AppDescriptor,
    AppRecord,
    Departure,
    NodeId,
    NodeScore,
    Signature,
)


def b64encode(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def b64decode(text: str) -> bytes:
    try:
        return base64.b64decode(text, validate=True)
    except (binascii.Error, ValueError):
        raise ValueError("not valid base64") from None


def _check_node_id(value: str) -> str:
    try:
        raw = bytes.fromhex(value)
    except ValueError:
        raise ValueError("node ids are hex strings") from None
    if len(raw) != NODE_ID_SIZE:
        raise ValueError(f"node ids are {NODE_ID_SIZE} bytes")
    return value.lower()


def _check_signature(value: str) -> str:
    if len(b64decode(value)) != SIGNATURE_SIZE:
        raise ValueError(f"signatures are {SIGNATURE_SIZE} bytes")
    return value


HexNodeId = Annotated[str, AfterValidator(_check_node_id)]
B64Signature = Annotated[str, AfterValidator(_check_signature)]


class AppRecordDocument(BaseModel):
    app_id: str
    cpu: int = Field(ge=0)
    ram: int = Field(0, ge=0)
    disk: int = Field(0, ge=0)
    network: int = Field(0, ge=0)
    timestamp: int = Field(ge=0)

    @classmethod
    def from_record(cls, app: AppRecord) -> "AppRecordDocument":
        return cls(app_id=app.app_id, cpu=app.cpu, ram=app.ram, disk=app.disk, network=app.network, timestamp=app.timestamp)

    def to_record(self) -> AppRecord:
        return AppRecord(self.app_id, self.cpu, self.ram, self.disk, self.network, self.timestamp)


class ScoreDocument(BaseModel):
    """A signed score; the signature covers the canonical encoding of the other fields"""

    node: HexNodeId
    apps: List[AppRecordDocument] = Field(default_factory=list)
    collected_at: int = Field(ge=0)
    stale: bool = False
    signature: B64Signature
    url: Optional[str] = None  # where the sender can be reached, set when joining

    @classmethod
    def from_score(cls, score: NodeScore, url: Optional[str] = None) -> "ScoreDocument":
        return cls(
            node=score.node.hex(),
            apps=[AppRecordDocument.from_record(app) for app in score.apps],
            collected_at=score.collected_at,
            stale=score.stale,
            signature=b64encode(score.signature.value),
            url=url,
        )

    def to_score(self) -> NodeScore:
        """Raises ValueError when the apps are out of order or out of range"""
        node = NodeId.from_hex(self.node)
        return NodeScore(
            node=node,
            apps=tuple(app.to_record() for app in self.apps),
            collected_at=self.collected_at,
            signature=Signature(b64decode(self.signature), node),
            stale=self.stale,
        )


class DepartureDocument(BaseModel):
    node: HexNodeId
    departed_at: int = Field(ge=0)
    signer: HexNodeId
    signature: B64Signature

    @classmethod
    def from_departure(cls, departure: Departure) -> "DepartureDocument":
        return cls(
            node=departure.node.hex(),
            departed_at=departure.departed_at,
            signer=departure.signature.signer.hex(),
            signature=b64encode(departure.signature.value),
        )

    def to_departure(self) -> Departure:
        signature = Signature(b64decode(self.signature), NodeId.from_hex(self.signer))
        return Departure(NodeId.from_hex(self.node), self.departed_at, signature)


class AppDocument(BaseModel):
    app_id: str = Field(min_length=1)
    cpu: int = Field(ge=0)
    ram: int = Field(0, ge=0)
    disk: int = Field(0, ge=0)
    network: int = Field(0, ge=0)

    @classmethod
    def from_descriptor(cls, app: AppDescriptor) -> "AppDocument":
        return cls(app_id=app.app_id, cpu=app.cpu, ram=app.ram, disk=app.disk, network=app.network)

    def to_descriptor(self) -> AppDescriptor:
        return AppDescriptor(self.app_id, self.cpu, self.ram, self.disk, self.network)


class PeerDocument(BaseModel):
    node_id: str
    url: str
    last_connection: Optional[str] = None
    connection_count: int = 0
    avg_rtt_ms: Optional[float] = None


class ChainHead(BaseModel):
    length: int
    head: str


class NodeRepresentation(BaseModel):
    node_id: str
    url: str
    time: int
    running: bool
    score: Optional[ScoreDocument] = None
    apps: List[AppRecordDocument]
    chain: ChainHead
    queue: List[str]
    peers: List[PeerDocument]
    last_connection: Optional[str] = None
    average_connection_ms: Optional[float] = None
    counters: Dict[str, int]


class AppsResponse(BaseModel):
    running: List[AppRecordDocument]
    queued: List[AppDocument]


class ChainPage(BaseModel):
    start: int
    length: int
    blocks: List[str]  # base64 canonical blocks


class Acknowledgment(BaseModel):
    status: str
    detail: Optional[str] = None


class P2pAck(BaseModel):
    accepted: bool
