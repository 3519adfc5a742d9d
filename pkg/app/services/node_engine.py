"""
One node's protocol state machine: gossip, rounds, block flooding, admission
and the runtime actions that follow accepted blocks.

The engine never blocks and never reads a clock. Hosts call tick() when
next_wakeup() is due and receive() for every inbound message, always with the
current time, and deliver the envelopes both return. The simulator and the
node daemon are the two hosts.
"""

from collections import Counter
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Set, Tuple

from app.core.crypto import NodeKey, verify
from app.core.encoding import block_hash, block_signing_payload
from app.core.errors import ChainFileError, EdgeLedgerError, NoCandidatesError, NotLeaderError
from app.core.types import PPM_ONE, AppDescriptor, Block, Departure, NodeId, NodeScore
from app.core.wire import Body, DyntReply, MessageKind, MigrationTransfer, encode_message
from app.services.chain_store import ChainStore
from app.services.consensus import (
    DEFAULT_ELECTION,
    ActionKind,
    ChainParams,
    ChainState,
    LeaderElection,
    LocalAction,
    apply_block,
    create_block,
    verify_block,
)
from app.services.gossip import (
    Announcement,
    GossipConfig,
    GossipService,
    ScoreMessage,
    sign_departure,
    verify_departure,
)
from app.services.migration import Sender, accept_migration, migrate_app
from app.services.planner import (
    CPU_ONLY,
    MigrationPlanner,
    ResourceWeights,
    admit_queue,
    ledger_view,
)
from app.services.runtime import RuntimeAdapter
from app.utils.logger import setup_logging

logger = setup_logging("edge.node")


@dataclass(frozen=True)
class NodeConfig:
    block_time: int = 1000
    gossip: Optional[GossipConfig] = None
    genesis_delay: Optional[int] = None
    admission_threshold: int = 900_000
    weights: ResourceWeights = CPU_ONLY
    migrations: bool = True
    max_future_blocks: int = 64
    # competing blocks kept per future height
    max_blocks_per_height: int = 4
    # heights below the head whose block digests are remembered
    seen_window: int = 16

    def __post_init__(self):
        if self.block_time <= 0:
            raise ValueError("block_time must be positive")
        if self.admission_threshold < 0:
            raise ValueError("admission_threshold must not be negative")

    @property
    def gossip_config(self) -> GossipConfig:
        return self.gossip or GossipConfig.for_block_time(self.block_time)

    @property
    def round_timeout(self) -> int:
        return 2 * self.block_time

    @property
    def genesis_wait(self) -> int:
        return 2 * self.block_time if self.genesis_delay is None else self.genesis_delay

    @property
    def chain_params(self) -> ChainParams:
        return ChainParams(block_time=self.block_time, weights=self.weights, migrations=self.migrations)


@dataclass(frozen=True)
class Envelope:
    to: NodeId
    kind: MessageKind
    body: Body
    data: bytes

    @property
    def size(self) -> int:
        return len(self.data)


class NodeEngine:

    def __init__(
        self,
        key: NodeKey,
        runtime: RuntimeAdapter,
        config: NodeConfig = NodeConfig(),
        peers: Iterable[NodeId] = (),
        started_at: int = 0,
        store: Optional[ChainStore] = None,
        planner: Optional[MigrationPlanner] = None,
        election: Optional[LeaderElection] = None,
        send_migration: Optional[Sender] = None,
    ):
        self.key = key
        self.node_id = key.node_id
        self.runtime = runtime
        self.config = config
        self.gossip = GossipService(key, config.gossip_config, peers)
        self.chain = ChainState(config.chain_params)
        self.store = store
        self.planner = planner or self.chain.params.planner
        self.election = election or DEFAULT_ELECTION
        self.send_migration = send_migration

        self.queue: List[AppDescriptor] = []
        self.seen_blocks: Dict[int, Set[bytes]] = {}
        self.future: Dict[int, List[Block]] = {}
        self.counters: Counter = Counter()
        self.running = True
        # (height, retry) a leaving leader still has to produce
        self.leaving: Optional[Tuple[int, int]] = None

        self.round_start = started_at + config.genesis_wait
        self.attempted = -1
        self.next_collect = started_at

        if store is not None:
            self._replay(store.load())

    # --- setup ----------------------------------------------------------------

    def _replay(self, blocks: List[Block]) -> None:
        for block in blocks:
            verdict = verify_block(block, self.chain, self.election, self.planner)
            if not verdict.accepted:
                raise ChainFileError(f"stored block {block.height} rejected: {verdict.reason.value} {verdict.detail}")
            self.chain.append(block)
            self._remember(block)
            self._new_round(block)
        if blocks:
            logger.info(f"📜 replayed {len(blocks)} blocks, head {self.chain.head}")

    def _new_round(self, block: Block) -> None:
        self.round_start = block.timestamp + self.config.block_time
        self.attempted = -1

    @property
    def peers(self) -> Set[NodeId]:
        return self.gossip.peers

    def add_peer(self, peer: NodeId) -> None:
        self.gossip.add_peer(peer)

    # --- timers -----------------------------------------------------------------

    def next_wakeup(self) -> int:
        """Earliest time at which tick() has something to do"""
        wakeups = [self.next_collect, self.round_start + (self.attempted + 1) * self.config.round_timeout]
        last = self.gossip.last_broadcast
        if last is not None:
            wakeups.append(last + self.gossip.config.delta_st)
        return min(wakeups)

    def tick(self, now: int) -> List[Envelope]:
        if not self.running:
            return []
        self.gossip.expire_pending(now)
        if now >= self.next_collect:
            if self.leaving is None:
                self.gossip.collect_local_state(self.runtime, now)
            while self.next_collect <= now:
                self.next_collect += self.gossip.config.collect_interval
        out = self._announcements(self.gossip.on_timer(now))
        out += self._maybe_lead(now)
        if self.leaving is not None:
            height, retry = self.leaving
            if self.chain.next_height > height or self.attempted >= retry:
                out += self._depart(now)
        return out

    def pending_retry(self, now: int) -> int:
        """The retry this node attempts next at the current height"""
        current = (now - self.round_start) // self.config.round_timeout if now >= self.round_start else 0
        return max(current, self.attempted + 1)

    def leads(self, retry: int, now: int) -> bool:
        snapshot = self.gossip.pool.snapshot(now, self.chain.params.stale_after)
        bootstrap = [s.node for s in snapshot] or [self.node_id]
        try:
            return self.election.elect(self.chain.election_input(retry, bootstrap, self.election)) == self.node_id
        except NoCandidatesError:
            return False

    def _maybe_lead(self, now: int) -> List[Envelope]:
        if now < self.round_start:
            return []
        retry = (now - self.round_start) // self.config.round_timeout
        if retry <= self.attempted:
            return []
        if retry > 0:
            self.counters["round_timeouts"] += 1
            logger.info(f"⏰ no block at height {self.chain.next_height}, moving to retry {retry}")
        self.attempted = retry
        try:
            block = create_block(
                self.chain, self.gossip.pool, self.admitted(now), self.key, now, retry, self.election, self.planner
            )
        except (NotLeaderError, NoCandidatesError):
            return []
        self.counters["blocks_led"] += 1
        logger.info(f"👑 {self.node_id} leads height {block.height} retry {retry}")
        out = self._accept(block, now)
        out += self._drain_future(now)
        return out

    def admitted(self, now: int) -> List[AppDescriptor]:
        """Queued apps the mean load of the fresh pool still has room for"""
        snapshot = self.gossip.pool.snapshot(now, self.chain.params.stale_after)
        views, _ = ledger_view(self.chain.block_data(snapshot, ()))
        total = sum(view.raw for view in views.values()) // PPM_ONE
        pending = [app for app in self.queue if app.app_id not in self.chain.assignments]
        return list(admit_queue(pending, total, len(snapshot), self.config.admission_threshold, self.config.weights))

    # --- inbound ----------------------------------------------------------------

    def receive(self, kind: MessageKind, body: Body, sender: NodeId, now: int) -> List[Envelope]:
        if not self.running:
            return []
        if kind == MessageKind.DYNT:
            wanted = self.gossip.handle_dynt(body, sender, now)
            return [self._envelope(sender, MessageKind.DYNT_REPLY, DyntReply(body, wanted))]
        if kind == MessageKind.DYNT_REPLY:
            return self._on_dynt_reply(body, sender)
        if kind == MessageKind.SCORE:
            return self.receive_score(body, sender, now)
        if kind == MessageKind.BLOCK:
            return self.receive_block(body, sender, now)
        if kind == MessageKind.APP:
            return self.submit_app(body, now, sender)
        if kind == MessageKind.LEAVE:
            return self.handle_departure(body, now, sender)
        if kind == MessageKind.MIGRATE:
            self.accept_migration(body)
            return []
        raise ValueError(f"unhandled message kind {kind!r}")

    def _on_dynt_reply(self, reply: DyntReply, sender: NodeId) -> List[Envelope]:
        if not reply.wanted:
            return []
        score = self.gossip.payload_for(reply.signature)
        if score is None:
            return []
        self.counters["payloads_sent"] += 1
        return [self._envelope(sender, MessageKind.SCORE, score)]

    def receive_score(self, score: NodeScore, sender: NodeId, now: int) -> List[Envelope]:
        forward = self.gossip.handle_score(ScoreMessage(score, sender), now)
        if not forward:
            return []
        return self._announcements(self.gossip.announce(score.signature.value, forward))

    def receive_block(self, block: Block, sender: Optional[NodeId], now: int) -> List[Envelope]:
        if block.height < self.chain.next_height - self.config.seen_window:
            self.counters["old_blocks"] += 1
            return []
        digest = block_hash(block).value
        if digest in self.seen_blocks.get(block.height, ()):
            self.counters["duplicate_blocks"] += 1
            return []

        if block.height > self.chain.next_height:
            if block.height - self.chain.next_height > self.config.max_future_blocks:
                return []
            waiting = self.future.setdefault(block.height, [])
            if len(waiting) >= self.config.max_blocks_per_height:
                self.counters["dropped_future_blocks"] += 1
                return []
            self._remember(block, digest)
            waiting.append(block)
            return []
        self._remember(block, digest)
        if block.height < self.chain.next_height:
            self._check_equivocation(block, digest)

        verdict = verify_block(block, self.chain, self.election, self.planner)
        if not verdict.accepted:
            self.counters[f"rejected_{verdict.reason.value}"] += 1
            logger.warning(
                f"❌ rejected block {block.height} from {block.leader}: {verdict.reason.value} {verdict.detail}"
            )
            return []
        out = self._accept(block, now, sender)
        out += self._drain_future(now)
        return out

    def _check_equivocation(self, block: Block, digest: bytes) -> None:
        accepted = self.chain.blocks[block.height]
        if accepted.leader != block.leader or accepted.retry != block.retry:
            return
        if block_hash(accepted).value == digest:
            return
        sig = block.leader_signature
        if sig.signer == block.leader and verify(sig, block_signing_payload(block)):
            self.counters["equivocations"] += 1
            logger.warning(f"🚨 {block.leader} signed two blocks at height {block.height} retry {block.retry}")

    def _drain_future(self, now: int) -> List[Envelope]:
        out = []
        for height in [h for h in self.future if h < self.chain.next_height]:
            del self.future[height]
        while self.chain.next_height in self.future:
            for block in self.future.pop(self.chain.next_height):
                if verify_block(block, self.chain, self.election, self.planner).accepted:
                    out += self._accept(block, now)
                    break
        return out

    def _remember(self, block: Block, digest: Optional[bytes] = None) -> None:
        self.seen_blocks.setdefault(block.height, set()).add(digest or block_hash(block).value)

    def _accept(self, block: Block, now: int, sender: Optional[NodeId] = None) -> List[Envelope]:
        actions = apply_block(block, self.chain, self.node_id)
        if self.store is not None:
            self.store.append(block)
        self._remember(block)
        floor = self.chain.next_height - self.config.seen_window
        for height in [h for h in self.seen_blocks if h < floor]:
            del self.seen_blocks[height]
        self._new_round(block)
        placed = {p.app_id for p in block.plan.placements}
        self.queue = [app for app in self.queue if app.app_id not in placed]
        self.counters["blocks_accepted"] += 1
        logger.info(f"✅ height {block.height} head {self.chain.head} plan {_describe(block)}")
        for action in actions:
            self._perform(action)
        return self._flood(MessageKind.BLOCK, block, exclude=sender)

    # --- local actions ----------------------------------------------------------

    def _perform(self, action: LocalAction) -> None:
        try:
            if action.kind == ActionKind.START:
                self.runtime.start(action.app)
                self.counters["apps_started"] += 1
            elif action.kind == ActionKind.CHECKPOINT_AND_SEND:
                if self.send_migration is None:
                    logger.warning(f"⚠️ no migration transport, {action.app_id} stays here")
                    return
                outcome = migrate_app(action.app, action.peer, self.node_id, self.runtime, self.send_migration)
                self.counters[f"migrations_{outcome.value}"] += 1
            else:
                logger.debug(f"awaiting {action.app_id} from {action.peer}")
        except EdgeLedgerError as exc:
            self.counters["failed_actions"] += 1
            logger.error(f"❌ {action.kind.value} {action.app_id} failed: {exc}")

    def accept_migration(self, transfer: MigrationTransfer) -> bool:
        ok = accept_migration(transfer, self.runtime)
        self.counters["migrations_received" if ok else "migrations_refused"] += 1
        return ok

    # --- apps and membership ------------------------------------------------------

    def submit_app(self, app: AppDescriptor, now: int, sender: Optional[NodeId] = None) -> List[Envelope]:
        """Queue an app for admission and flood it; known apps are ignored"""
        if app.app_id in self.chain.assignments or any(a.app_id == app.app_id for a in self.queue):
            return []
        self.queue.append(app)
        return self._flood(MessageKind.APP, app, exclude=sender)

    def handle_departure(self, departure: Departure, now: int, sender: Optional[NodeId] = None) -> List[Envelope]:
        if not verify_departure(departure):
            self.counters["tampered"] += 1
            logger.warning(f"❌ dropped departure of {departure.node}: bad signature")
            return []
        if departure.node == self.node_id:
            return []
        previous = self.gossip.departed.get(departure.node)
        if previous is not None and previous >= departure.departed_at:
            return []
        self.gossip.remove_node(departure.node, departure.departed_at)
        logger.info(f"👋 {departure.node} left at {departure.departed_at}")
        return self._flood(MessageKind.LEAVE, departure, exclude=sender)

    def leave(self, now: int) -> List[Envelope]:
        """
        Withdraw from the pool and leave the network.

        A node elected for the pending round stays until that block is out.
        Its own snapshot no longer holds it, so the block re-places its apps.
        """
        if not self.running or self.leaving is not None:
            return []
        retry = self.pending_retry(now)
        leading = self.leads(retry, now)
        self.gossip.withdraw(now)
        if leading:
            self.leaving = (self.chain.next_height, retry)
            logger.info(f"👋 leaving after height {self.chain.next_height} retry {retry}")
            return []
        return self._depart(now)

    def _depart(self, now: int) -> List[Envelope]:
        try:
            for app in self.runtime.list_apps(now):
                self.runtime.remove(app.app_id)
        except EdgeLedgerError as exc:
            logger.error(f"❌ could not stop local apps on leaving: {exc}")
        out = self._flood(MessageKind.LEAVE, sign_departure(self.key, now))
        self.running = False
        self.leaving = None
        logger.info(f"👋 {self.node_id} left at {now}")
        return out

    # --- outbound -----------------------------------------------------------------

    def _envelope(self, to: NodeId, kind: MessageKind, body: Body) -> Envelope:
        return Envelope(to, kind, body, encode_message(kind, body))

    def _announcements(self, announcements: List[Announcement]) -> List[Envelope]:
        if not announcements:
            return []
        data = encode_message(MessageKind.DYNT, announcements[0].signature)
        return [Envelope(a.peer, MessageKind.DYNT, a.signature, data) for a in announcements]

    def _flood(self, kind: MessageKind, body: Body, exclude: Optional[NodeId] = None) -> List[Envelope]:
        targets = [peer for peer in sorted(self.gossip.peers) if peer != exclude]
        if not targets:
            return []
        data = encode_message(kind, body)
        return [Envelope(peer, kind, body, data) for peer in targets]


def _describe(block: Block) -> str:
    plan = block.plan
    if plan.migration is not None:
        m = plan.migration
        return f"migrate {m.app_id} {m.source}->{m.target}"
    if plan.placements:
        return f"place {len(plan.placements)}"
    return "empty"
