"""
Leader election, block production and recompute-to-verify validation.

A block is accepted only if it links to the local head, comes from the leader
every node computes for (head, height, retry), carries valid signatures, and
holds exactly the plan the local planner produces from the block's own score
and queue snapshots plus the chain's assignments. Honest nodes therefore
either all accept a block or all reject it.
"""

import struct
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Iterable, List, Optional, Tuple

from app.core.crypto import NodeKey, verify
from app.core.encoding import block_hash, block_signing_payload, canonical_encode, hash_bytes
from app.core.errors import NoCandidatesError, NotLeaderError
from app.core.types import (
    EMPTY_PLAN,
    AppDescriptor,
    Assignment,
    Block,
    Hash,
    NodeId,
    NodeScore,
    Signature,
)
from app.services.gossip import ScorePool, verify_score
from app.services.planner import (
    CPU_ONLY,
    DEFAULT_PLANNER,
    PLACEMENT_ONLY,
    BlockData,
    MigrationPlanner,
    ResourceWeights,
    apply_plan,
)
from app.utils.logger import setup_logging

logger = setup_logging("edge.consensus")


class RejectReason(str, Enum):
    BAD_LINK = "bad-link"
    BAD_HEIGHT = "bad-height"
    WRONG_LEADER = "wrong-leader"
    BAD_SIGNATURE = "bad-signature"
    BAD_SCORE = "bad-score"
    BAD_TIMESTAMP = "bad-timestamp"
    PLAN_MISMATCH = "plan-mismatch"


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    reason: Optional[RejectReason] = None
    detail: str = ""

    @classmethod
    def accept(cls) -> "Verdict":
        return cls(True)

    @classmethod
    def reject(cls, reason: RejectReason, detail: str = "") -> "Verdict":
        return cls(False, reason, detail)


# --- election ---------------------------------------------------------------

@dataclass(frozen=True)
class ElectionInput:
    prev_hash: Hash
    height: int
    retry: int
    candidates: Tuple[NodeId, ...]
    # leaders of earlier retries at this height, skipped while others remain
    excluded: Tuple[NodeId, ...] = ()


class LeaderElection(ABC):

    @abstractmethod
    def elect(self, election: ElectionInput) -> NodeId:
        ...


_LOTTERY = struct.Struct(">QQ")


def lottery_ticket(prev_hash: Hash, height: int, retry: int, candidate: NodeId) -> bytes:
    return hash_bytes(prev_hash.value + _LOTTERY.pack(height, retry) + candidate.value).value


class HashLotteryElection(LeaderElection):
    """Lowest hash(prev_hash ‖ height ‖ retry ‖ candidate) wins"""

    def elect(self, election: ElectionInput) -> NodeId:
        if not election.candidates:
            raise NoCandidatesError(f"no candidates for height {election.height}")
        pool = [c for c in election.candidates if c not in set(election.excluded)]
        if not pool:
            pool = list(election.candidates)
        return min(
            pool,
            key=lambda c: (lottery_ticket(election.prev_hash, election.height, election.retry, c), c),
        )


DEFAULT_ELECTION = HashLotteryElection()


def elect_leader(election: ElectionInput) -> NodeId:
    return DEFAULT_ELECTION.elect(election)


# --- chain --------------------------------------------------------------------

@dataclass(frozen=True)
class ChainParams:
    block_time: int = 1000
    weights: ResourceWeights = CPU_ONLY
    # False on no-rebalancing chains, whose plans only drain the queue
    migrations: bool = True

    @property
    def planner(self) -> MigrationPlanner:
        return DEFAULT_PLANNER if self.migrations else PLACEMENT_ONLY

    @property
    def settle_ms(self) -> int:
        return self.block_time

    @property
    def stale_after(self) -> int:
        return 2 * self.block_time

    @property
    def round_timeout(self) -> int:
        return 2 * self.block_time

    def earliest(self, previous: "Block", retry: int) -> int:
        """First timestamp a block at this retry may carry after previous"""
        return previous.timestamp + self.block_time + retry * self.round_timeout


@dataclass
class ChainState:
    params: ChainParams = field(default_factory=ChainParams)
    blocks: List[Block] = field(default_factory=list)
    head: Hash = field(default_factory=Hash.zero)
    assignments: Dict[str, Assignment] = field(default_factory=dict)
    catalog: Dict[str, AppDescriptor] = field(default_factory=dict)

    @property
    def next_height(self) -> int:
        return len(self.blocks)

    @property
    def head_block(self) -> Optional[Block]:
        return self.blocks[-1] if self.blocks else None

    def candidates(self, bootstrap: Iterable[NodeId] = ()) -> Tuple[NodeId, ...]:
        """The previous block's snapshot nodes, or bootstrap when there are none"""
        head = self.head_block
        if head is not None and head.scores:
            return tuple(score.node for score in head.scores)
        return tuple(sorted(set(bootstrap)))

    def election_input(self, retry: int, bootstrap: Iterable[NodeId] = (), election: Optional[LeaderElection] = None) -> ElectionInput:
        election = election or DEFAULT_ELECTION
        base = ElectionInput(self.head, self.next_height, 0, self.candidates(bootstrap))
        excluded = []
        # every candidate leads once before the exclusions reset
        size = max(1, len(base.candidates))
        for earlier in range(retry - retry % size, retry):
            excluded.append(election.elect(_with(base, retry=earlier, excluded=tuple(excluded))))
            if len(set(excluded)) >= len(base.candidates):
                excluded = []
        return _with(base, retry=retry, excluded=tuple(excluded))

    def block_data(self, scores: Tuple[NodeScore, ...], queue: Tuple[AppDescriptor, ...]) -> BlockData:
        return BlockData(
            scores=scores,
            assignments=dict(self.assignments),
            queue=queue,
            catalog=dict(self.catalog),
            weights=self.params.weights,
            settle_ms=self.params.settle_ms,
        )

    def orphans(self, live: Iterable[NodeId]) -> Tuple[str, ...]:
        """Assigned apps whose node has no fresh score"""
        live = set(live)
        return tuple(sorted(a for a, assignment in self.assignments.items() if assignment.node not in live))

    def append(self, block: Block) -> None:
        """Extend the chain with an already verified block"""
        data = self.block_data(block.scores, block.queue_snapshot)
        after = apply_plan(data, block.plan, at=block.timestamp)
        self.assignments = dict(after.assignments)
        self.catalog = dict(after.catalog)
        self.blocks.append(block)
        self.head = block_hash(block)

    def copy(self) -> "ChainState":
        return ChainState(self.params, list(self.blocks), self.head, dict(self.assignments), dict(self.catalog))


def _with(election: ElectionInput, **changes) -> ElectionInput:
    values = dict(election.__dict__)
    values.update(changes)
    return ElectionInput(**values)


# --- production -----------------------------------------------------------------

def build_queue_snapshot(chain: ChainState, snapshot: Tuple[NodeScore, ...], queue: Iterable[AppDescriptor]) -> Tuple[AppDescriptor, ...]:
    """Orphaned apps first (by app_id), then the pending queue in arrival order"""
    live = [score.node for score in snapshot]
    orphans = [chain.catalog[a] for a in chain.orphans(live) if a in chain.catalog]
    seen = {app.app_id for app in orphans}
    pending = []
    for app in queue:
        if app.app_id in seen or app.app_id in chain.assignments:
            continue
        seen.add(app.app_id)
        pending.append(app)
    return tuple(orphans + pending)


def create_block(
    chain: ChainState,
    pool: ScorePool,
    queue: Iterable[AppDescriptor],
    key: NodeKey,
    now: int,
    retry: int = 0,
    election: Optional[LeaderElection] = None,
    planner: Optional[MigrationPlanner] = None,
) -> Block:
    """
    Build and sign the next block.

    Raises:
        NotLeaderError: key does not belong to the elected leader
        NoCandidatesError: nobody is eligible
    """
    election = election or DEFAULT_ELECTION
    planner = planner or chain.params.planner
    snapshot = pool.snapshot(now, chain.params.stale_after)
    # with nobody else known the proposer nominates itself
    bootstrap = [s.node for s in snapshot] or [key.node_id]
    leader = election.elect(chain.election_input(retry, bootstrap, election))
    if leader != key.node_id:
        raise NotLeaderError(f"{key.node_id} is not the leader of height {chain.next_height} retry {retry}, {leader} is")

    queue_snapshot = build_queue_snapshot(chain, snapshot, queue)
    plan = planner.generate(chain.block_data(snapshot, queue_snapshot)) if snapshot else EMPTY_PLAN
    unsigned = Block(
        height=chain.next_height,
        prev_hash=chain.head,
        retry=retry,
        leader=key.node_id,
        plan=plan,
        scores=snapshot,
        queue_snapshot=queue_snapshot,
        timestamp=now,
        leader_signature=Signature(bytes(64), key.node_id),
    )
    return sign_block(unsigned, key)


def sign_block(block: Block, key: NodeKey) -> Block:
    return replace(block, leader_signature=key.sign(block_signing_payload(block)))


# --- verification ---------------------------------------------------------------

def verify_block(
    block: Block,
    chain: ChainState,
    election: Optional[LeaderElection] = None,
    planner: Optional[MigrationPlanner] = None,
) -> Verdict:
    election = election or DEFAULT_ELECTION
    planner = planner or chain.params.planner

    if block.prev_hash != chain.head:
        return Verdict.reject(RejectReason.BAD_LINK, f"prev {block.prev_hash} != head {chain.head}")
    if block.height != chain.next_height:
        return Verdict.reject(RejectReason.BAD_HEIGHT, f"height {block.height} != {chain.next_height}")

    try:
        bootstrap = [s.node for s in block.scores] or [block.leader]
        expected = election.elect(chain.election_input(block.retry, bootstrap, election))
    except NoCandidatesError as exc:
        return Verdict.reject(RejectReason.WRONG_LEADER, str(exc))
    if block.leader != expected:
        return Verdict.reject(RejectReason.WRONG_LEADER, f"{block.leader} is not {expected}")

    sig = block.leader_signature
    if sig.signer != block.leader or not verify(sig, block_signing_payload(block)):
        return Verdict.reject(RejectReason.BAD_SIGNATURE, "leader signature does not verify")

    for score in block.scores:
        if not verify_score(score):
            return Verdict.reject(RejectReason.BAD_SCORE, f"score of {score.node} does not verify")
        if score.collected_at > block.timestamp:
            return Verdict.reject(RejectReason.BAD_SCORE, f"score of {score.node} is from the future")

    head = chain.head_block
    if head is not None and block.timestamp < chain.params.earliest(head, block.retry):
        return Verdict.reject(
            RejectReason.BAD_TIMESTAMP,
            f"timestamp {block.timestamp} precedes {chain.params.earliest(head, block.retry)} for retry {block.retry}",
        )

    if block.scores:
        recomputed = planner.generate(chain.block_data(block.scores, block.queue_snapshot))
    else:
        recomputed = EMPTY_PLAN
    if canonical_encode(recomputed) != canonical_encode(block.plan):
        return Verdict.reject(RejectReason.PLAN_MISMATCH, "plan differs from local recomputation")

    return Verdict.accept()


# --- applying -----------------------------------------------------------------

class ActionKind(str, Enum):
    START = "start"
    CHECKPOINT_AND_SEND = "checkpoint-and-send"
    AWAIT_AND_RESUME = "await-and-resume"


@dataclass(frozen=True)
class LocalAction:
    kind: ActionKind
    app_id: str
    app: Optional[AppDescriptor] = None
    peer: Optional[NodeId] = None


def block_actions(block: Block, catalog: Dict[str, AppDescriptor], local: NodeId) -> List[LocalAction]:
    """What local has to do about a block, given the catalog before it"""
    queued = {app.app_id: app for app in block.queue_snapshot}
    actions = []
    for placement in block.plan.placements:
        if placement.node == local:
            actions.append(LocalAction(ActionKind.START, placement.app_id, app=queued[placement.app_id]))
    migration = block.plan.migration
    if migration is not None and migration.source != migration.target:
        app = catalog.get(migration.app_id)
        if migration.source == local:
            actions.append(LocalAction(ActionKind.CHECKPOINT_AND_SEND, migration.app_id, app=app, peer=migration.target))
        elif migration.target == local:
            actions.append(LocalAction(ActionKind.AWAIT_AND_RESUME, migration.app_id, app=app, peer=migration.source))
    return actions


def apply_block(block: Block, chain: ChainState, local: NodeId) -> List[LocalAction]:
    """Append a verified block and return what this node must do about it"""
    actions = block_actions(block, chain.catalog, local)
    chain.append(block)
    return actions


def on_round_timeout(chain: ChainState, retry: int, bootstrap: Iterable[NodeId] = (), election: Optional[LeaderElection] = None) -> ElectionInput:
    """Election input for the next attempt at the same height"""
    return chain.election_input(retry + 1, bootstrap, election)


def audit_chain(blocks: Iterable[Block], params: ChainParams = ChainParams()) -> Tuple[int, Optional[int], Optional[Verdict]]:
    """
    Re-verify a chain from genesis.

    Returns:
        (blocks verified, height of the first failure or None, its verdict)
    """
    chain = ChainState(params)
    count = 0
    for index, block in enumerate(blocks):
        verdict = verify_block(block, chain)
        if not verdict.accepted:
            return count, index, verdict
        chain.append(block)
        count += 1
    return count, None, None
