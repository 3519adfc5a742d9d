"""
Known peers and how well we reach them, kept in the node's database.

Addresses are cached in memory because every outgoing message needs one;
connection statistics are written through at most once per flush interval per
peer.
"""

import threading
import time
from dataclasses import dataclass
from datetime import datetime
from typing import Dict, List, Optional, Tuple

from sqlalchemy.orm import sessionmaker

from app.core.types import NodeId
from app.models.peer import Peer
from app.utils.logger import setup_logging

logger = setup_logging("edge.peers")


@dataclass(frozen=True)
class PeerInfo:
    node_id: NodeId
    url: str
    first_seen: datetime
    last_connection: Optional[datetime]
    connection_count: int
    avg_rtt_ms: Optional[float]

    @classmethod
    def from_row(cls, row: Peer) -> "PeerInfo":
        return cls(
            node_id=NodeId.from_hex(row.node_id),
            url=row.url,
            first_seen=row.first_seen,
            last_connection=row.last_connection,
            connection_count=row.connection_count,
            avg_rtt_ms=row.avg_rtt_ms,
        )


class PeerRegistry:

    def __init__(self, session_factory: sessionmaker, flush_interval: float = 1.0):
        self.session_factory = session_factory
        self.flush_interval = flush_interval
        self._lock = threading.Lock()
        self._peers: Dict[NodeId, PeerInfo] = {}
        self._flushed: Dict[NodeId, float] = {}
        with self.session_factory() as db:
            for row in db.query(Peer).all():
                info = PeerInfo.from_row(row)
                self._peers[info.node_id] = info

    def register(self, node: NodeId, url: str) -> PeerInfo:
        url = url.rstrip("/")
        with self._lock, self.session_factory() as db:
            row = db.get(Peer, node.hex())
            if row is None:
                row = Peer(node_id=node.hex(), url=url, first_seen=datetime.utcnow(), connection_count=0)
                db.add(row)
                logger.info(f"🤝 new peer {node} at {url}")
            else:
                row.url = url
            db.commit()
            db.refresh(row)
            info = PeerInfo.from_row(row)
            self._peers[node] = info
            return info

    def record_connection(self, node: NodeId, rtt_ms: float) -> None:
        """Fold one successful exchange into the peer's statistics"""
        with self._lock:
            info = self._peers.get(node)
            if info is None:
                return
            count = info.connection_count + 1
            previous = info.avg_rtt_ms or 0.0
            avg = previous + (rtt_ms - previous) / count
            info = PeerInfo(info.node_id, info.url, info.first_seen, datetime.utcnow(), count, avg)
            self._peers[node] = info
            now = time.monotonic()
            if now - self._flushed.get(node, 0.0) < self.flush_interval:
                return
            self._flushed[node] = now
            with self.session_factory() as db:
                row = db.get(Peer, node.hex())
                if row is not None:
                    row.last_connection = info.last_connection
                    row.connection_count = info.connection_count
                    row.avg_rtt_ms = info.avg_rtt_ms
                    db.commit()

    def remove(self, node: NodeId) -> bool:
        with self._lock, self.session_factory() as db:
            self._peers.pop(node, None)
            row = db.get(Peer, node.hex())
            if row is None:
                return False
            db.delete(row)
            db.commit()
            return True

    def url_of(self, node: NodeId) -> Optional[str]:
        info = self._peers.get(node)
        return info.url if info is not None else None

    def get(self, node: NodeId) -> Optional[PeerInfo]:
        return self._peers.get(node)

    def all(self) -> List[PeerInfo]:
        with self._lock:
            return sorted(self._peers.values(), key=lambda p: p.node_id)

    def node_ids(self) -> List[NodeId]:
        return [info.node_id for info in self.all()]

    def connection_stats(self) -> Tuple[Optional[datetime], Optional[float]]:
        """Most recent connection to any peer, and the mean round trip over all exchanges"""
        peers = [p for p in self.all() if p.connection_count]
        if not peers:
            return None, None
        last = max(p.last_connection for p in peers)
        total = sum(p.connection_count for p in peers)
        avg = sum(p.avg_rtt_ms * p.connection_count for p in peers) / total
        return last, avg

    def __contains__(self, node: NodeId) -> bool:
        return node in self._peers
