"""
The node daemon's core: hosts a NodeEngine on wall-clock time.

One re-entrant lock serialises every state change. A ticker thread drives the
engine's timers, HTTP handlers feed it inbound messages and API calls, and a
small thread pool delivers whatever the engine emits so no request is ever
made while another handler waits on the lock, with the single exception of
migration transfers, which the engine needs an answer to.
"""

import threading
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional

from app.config import NodeSettings
from app.core.crypto import NodeKey
from app.core.encoding import canonical_encode, decode_block
from app.core.errors import (
    AuthenticationError,
    AuthorizationError,
    ConflictError,
    EdgeLedgerError,
    EncodingError,
    UnknownNodeError,
)
from app.core.types import AppDescriptor, Departure, NodeId, NodeScore
from app.core.wire import MessageKind, MigrationTransfer, decode_message, encode_message
from app.dto.dtos import (
    AppDocument,
    AppRecordDocument,
    AppsResponse,
    ChainHead,
    ChainPage,
    NodeRepresentation,
    PeerDocument,
    ScoreDocument,
    b64decode,
    b64encode,
)
from app.services.chain_store import ChainStore
from app.services.gossip import verify_departure, verify_score
from app.services.node_engine import Envelope, NodeEngine
from app.services.peer_registry import PeerRegistry
from app.services.runtime import RuntimeAdapter
from app.services.transport import PeerTransport
from app.utils.logger import setup_logging

logger = setup_logging("edge.node")

MAX_CHAIN_PAGE = 64


def wall_clock_ms() -> int:
    return time.time_ns() // 1_000_000


class NodeService:

    def __init__(
        self,
        settings: NodeSettings,
        key: NodeKey,
        runtime: RuntimeAdapter,
        transport: PeerTransport,
        registry: PeerRegistry,
        store: Optional[ChainStore] = None,
        clock=wall_clock_ms,
    ):
        self.settings = settings
        self.key = key
        self.node_id = key.node_id
        self.url = settings.url
        self.runtime = runtime
        self.transport = transport
        self.registry = registry
        self.clock = clock

        self._lock = threading.RLock()
        self._stop = threading.Event()
        self._wake = threading.Event()
        self._ticker: Optional[threading.Thread] = None
        self._senders: Optional[ThreadPoolExecutor] = None
        self._syncing = False
        # peer -> monotonic time until which sends to it are skipped
        self._backoff: Dict[NodeId, float] = {}

        self.engine = NodeEngine(
            key,
            runtime,
            settings.node_config(),
            peers=registry.node_ids(),
            started_at=clock(),
            store=store,
            send_migration=self._send_migration,
        )

    # --- lifecycle ----------------------------------------------------------------

    @property
    def running(self) -> bool:
        return self.engine.running

    def start(self) -> None:
        self._senders = ThreadPoolExecutor(max_workers=8, thread_name_prefix=f"edge-send-{self.node_id}")
        self.bootstrap(self.settings.peers)
        self._ticker = threading.Thread(target=self._tick_loop, name=f"edge-tick-{self.node_id}", daemon=True)
        self._ticker.start()
        logger.info(f"🚀 node {self.node_id} serving at {self.url} with {len(self.engine.peers)} peers")

    def stop(self) -> None:
        self._stop.set()
        self._wake.set()
        if self._ticker is not None:
            self._ticker.join(timeout=5)
        if self._senders is not None:
            self._senders.shutdown(wait=True, cancel_futures=True)
        logger.info(f"🛑 node {self.node_id} stopped at height {self.engine.chain.next_height}")

    def bootstrap(self, urls: List[str]) -> None:
        """Learn the ids behind peer URLs, announce ourselves and catch up on their chain"""
        for url in urls:
            if url.rstrip("/") == self.url:
                continue
            response = self.transport.fetch_node(url)
            if response is None or not response.ok:
                logger.warning(f"⚠️ peer {url} unreachable at startup")
                continue
            try:
                peer = NodeId.from_hex(response.body["node_id"])
            except (KeyError, TypeError, ValueError):
                logger.warning(f"⚠️ {url} did not answer with a node representation")
                continue
            if peer == self.node_id:
                continue
            self.registry.register(peer, url)
            self.registry.record_connection(peer, response.rtt_ms)
            with self._lock:
                self.engine.add_peer(peer)
            self.transport.join(url, self.own_document().model_dump())
            self._sync_from(peer)

    def own_document(self) -> ScoreDocument:
        with self._lock:
            score = self.engine.gossip.own_score
            if score is None:
                score = self.engine.gossip.collect_local_state(self.runtime, self.clock())
        return ScoreDocument.from_score(score, url=self.url)

    # --- loop ---------------------------------------------------------------------

    def _tick_loop(self) -> None:
        while not self._stop.is_set():
            self._wake.clear()
            with self._lock:
                if self.engine.running:
                    out = self.engine.tick(self.clock())
                    wait_ms = max(0, self.engine.next_wakeup() - self.clock())
                else:
                    out, wait_ms = [], 1000
            self._dispatch(out)
            self._wake.wait(min(wait_ms, 1000) / 1000)

    def _dispatch(self, envelopes: List[Envelope]) -> None:
        if self._senders is None or self._stop.is_set():
            return
        for envelope in envelopes:
            try:
                self._senders.submit(self._deliver, envelope)
            except RuntimeError:
                return

    def _deliver(self, envelope: Envelope) -> None:
        url = self.registry.url_of(envelope.to)
        if url is None:
            logger.debug(f"no address for {envelope.to}, dropping {envelope.kind.name}")
            return
        if self._backoff.get(envelope.to, 0.0) > time.monotonic():
            return
        response = self.transport.deliver(url, envelope.data)
        if response is None:
            self._backoff[envelope.to] = time.monotonic() + 2 * self.settings.block_time_ms / 1000
            logger.debug(f"{envelope.to} unreachable, backing off")
            return
        self._backoff.pop(envelope.to, None)
        if response.ok:
            self.registry.record_connection(envelope.to, response.rtt_ms)
        else:
            logger.debug(f"{envelope.to} answered {envelope.kind.name} with {response.status}")

    # --- inbound p2p ----------------------------------------------------------------

    def receive(self, sender: NodeId, data: bytes) -> bool:
        """
        Handle one peer message.

        Raises:
            EncodingError: the message does not decode
            AuthorizationError: the sender never joined
        """
        kind, body = decode_message(data)
        if sender not in self.registry and sender not in self.engine.peers:
            raise AuthorizationError(f"{sender} is not a known peer, join with POST /shared first")
        if kind == MessageKind.MIGRATE:
            return self._accept_migration(body)
        with self._lock:
            out = self.engine.receive(kind, body, sender, self.clock())
            gap = kind == MessageKind.BLOCK and bool(self.engine.future)
        self._dispatch(out)
        self._wake.set()
        if gap:
            self._request_sync(sender)
        return True

    def _accept_migration(self, transfer: MigrationTransfer) -> bool:
        # the sender holds its own lock while it waits for us
        if not self._lock.acquire(timeout=self.settings.request_timeout_s / 2):
            logger.warning(f"⚠️ busy, refusing migration of {transfer.app.app_id}")
            return False
        try:
            return self.engine.running and self.engine.accept_migration(transfer)
        finally:
            self._lock.release()

    def _send_migration(self, target: NodeId, transfer: MigrationTransfer) -> bool:
        url = self.registry.url_of(target)
        if url is None:
            return False
        response = self.transport.deliver(url, encode_message(MessageKind.MIGRATE, transfer))
        if response is None or not response.ok or not isinstance(response.body, dict):
            return False
        return response.body.get("accepted") is True

    # --- chain catch-up ---------------------------------------------------------------

    def _request_sync(self, peer: NodeId) -> None:
        with self._lock:
            if self._syncing or self._senders is None:
                return
            self._syncing = True
        try:
            self._senders.submit(self._sync_from, peer)
        except RuntimeError:
            self._syncing = False

    def _sync_from(self, peer: NodeId) -> None:
        url = self.registry.url_of(peer)
        try:
            while url is not None and not self._stop.is_set():
                with self._lock:
                    start = self.engine.chain.next_height
                encoded = self.transport.fetch_blocks(url, start, MAX_CHAIN_PAGE)
                if not encoded:
                    return
                with self._lock:
                    now = self.clock()
                    for text in encoded:
                        try:
                            block = decode_block(b64decode(text))
                        except (ValueError, EncodingError) as exc:
                            logger.warning(f"⚠️ {peer} served an undecodable block: {exc}")
                            return
                        # historical blocks are not re-flooded
                        self.engine.receive_block(block, peer, now)
                    progressed = self.engine.chain.next_height > start
                if progressed:
                    logger.info(f"🔄 caught up to height {self.engine.chain.next_height - 1} from {peer}")
                    self._wake.set()
                else:
                    return
        finally:
            self._syncing = False

    # --- public API ---------------------------------------------------------------------

    def put_score(self, score: NodeScore, url: Optional[str] = None) -> bool:
        """
        Inject a score as if it arrived over gossip; True if the pool changed.

        Raises:
            AuthenticationError: the signature does not verify
        """
        if not verify_score(score):
            raise AuthenticationError(f"score signature of {score.node} does not verify")
        if url and score.node != self.node_id and score.node not in self.registry:
            self._add_peer(score.node, url)
        with self._lock:
            out = self.engine.receive_score(score, score.node, self.clock())
            updated = self.engine.gossip.pool.get(score.node) == score
        self._dispatch(out)
        return updated

    def join(self, score: NodeScore, url: Optional[str] = None) -> None:
        """
        Add a node that is new to this one.

        Raises:
            AuthenticationError: the signature does not verify
            ConflictError: the node is already known
        """
        if not verify_score(score):
            raise AuthenticationError(f"score signature of {score.node} does not verify")
        with self._lock:
            known = (
                score.node == self.node_id
                or score.node in self.engine.gossip.pool
                or score.node in self.engine.peers
            )
            if known:
                raise ConflictError(f"{score.node} is already known, use PUT /shared")
            if url:
                self._add_peer(score.node, url)
            out = self.engine.receive_score(score, score.node, self.clock())
        logger.info(f"➕ {score.node} joined{' from ' + url if url else ''}")
        self._dispatch(out)

    def _add_peer(self, node: NodeId, url: str) -> None:
        self.registry.register(node, url)
        with self._lock:
            self.engine.add_peer(node)

    def depart(self, target: NodeId, departure: Departure) -> None:
        """
        Remove target from the network on its own signed request.

        Raises:
            UnknownNodeError: target is not known here
            AuthorizationError: the notice is signed by another node
            AuthenticationError: the signature does not verify
        """
        with self._lock:
            known = (
                target == self.node_id
                or target in self.engine.gossip.pool
                or target in self.engine.peers
                or target in self.registry
            )
        if not known:
            raise UnknownNodeError(f"{target} is not known here")
        if departure.node != target or departure.signature.signer != target:
            raise AuthorizationError(f"only {target} may remove itself")
        if not verify_departure(departure):
            raise AuthenticationError(f"departure signature of {target} does not verify")

        with self._lock:
            now = self.clock()
            if target == self.node_id:
                out = self.engine.leave(now)
            else:
                out = self.engine.handle_departure(departure, now)
        if target != self.node_id:
            self.registry.remove(target)
        self._dispatch(out)

    def submit_app(self, app: AppDescriptor) -> None:
        """Raises ConflictError when the app is already queued or placed"""
        with self._lock:
            engine = self.engine
            if app.app_id in engine.chain.assignments or any(q.app_id == app.app_id for q in engine.queue):
                raise ConflictError(f"app {app.app_id} is already known")
            out = engine.submit_app(app, self.clock())
        logger.info(f"📥 queued app {app.app_id} ({app.cpu} ppm cpu)")
        self._dispatch(out)
        self._wake.set()

    def _local_apps(self, now: int):
        try:
            return self.runtime.list_apps(now)
        except EdgeLedgerError:
            return []

    # --- read side ---------------------------------------------------------------------

    def representation(self) -> NodeRepresentation:
        with self._lock:
            engine = self.engine
            now = self.clock()
            score = engine.gossip.own_score
            apps = self._local_apps(now)
            chain = ChainHead(length=len(engine.chain.blocks), head=engine.chain.head.hex())
            queue = [app.app_id for app in engine.queue]
            counters = {**engine.gossip.counters, **engine.counters}
            running = engine.running
        last, average = self.registry.connection_stats()
        return NodeRepresentation(
            node_id=self.node_id.hex(),
            url=self.url,
            time=now,
            running=running,
            score=ScoreDocument.from_score(score) if score is not None else None,
            apps=[AppRecordDocument.from_record(app) for app in apps],
            chain=chain,
            queue=queue,
            peers=[
                PeerDocument(
                    node_id=peer.node_id.hex(),
                    url=peer.url,
                    last_connection=peer.last_connection.isoformat() if peer.last_connection else None,
                    connection_count=peer.connection_count,
                    avg_rtt_ms=peer.avg_rtt_ms,
                )
                for peer in self.registry.all()
            ],
            last_connection=last.isoformat() if last else None,
            average_connection_ms=average,
            counters=dict(counters),
        )

    def apps(self) -> AppsResponse:
        with self._lock:
            running = self._local_apps(self.clock())
            queued = list(self.engine.queue)
        return AppsResponse(
            running=[AppRecordDocument.from_record(app) for app in running],
            queued=[AppDocument.from_descriptor(app) for app in queued],
        )

    def chain_page(self, start: int, limit: int) -> ChainPage:
        limit = max(0, min(limit, MAX_CHAIN_PAGE))
        with self._lock:
            blocks = self.engine.chain.blocks[start:start + limit]
            length = len(self.engine.chain.blocks)
        return ChainPage(start=start, length=length, blocks=[b64encode(canonical_encode(b)) for b in blocks])
