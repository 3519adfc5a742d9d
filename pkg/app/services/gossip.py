"""
Score gossip: local collection, signed broadcast, flooding with dedup by
signature, and the "do you need this" (DYNT) pre-announcement that keeps each
full score payload to one transfer per receiving node.

Nothing here does I/O. Hosts (the node daemon or the simulator) call the
handlers serially with the current time and deliver whatever they return.
"""

from collections import Counter, OrderedDict
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple

from app.core.crypto import NodeKey, verify
from app.core.encoding import departure_signing_payload, score_signing_payload
from app.core.errors import RuntimeUnavailableError
from app.core.types import Departure, NodeId, NodeScore
from app.services.runtime import RuntimeAdapter
from app.utils.logger import setup_logging

logger = setup_logging("edge.gossip")


@dataclass(frozen=True)
class GossipConfig:
    delta_st: int = 500
    collect_interval: int = 500
    seen_cache_capacity: int = 65536
    pending_timeout: Optional[int] = None

    def __post_init__(self):
        if self.delta_st <= 0 or self.collect_interval <= 0:
            raise ValueError("delta_st and collect_interval must be positive")
        if self.seen_cache_capacity <= 0:
            raise ValueError("seen_cache_capacity must be positive")

    @classmethod
    def for_block_time(cls, block_time: int, **overrides) -> "GossipConfig":
        """Broadcast and re-collect every half block period: at least one fresh score per round"""
        half = max(1, block_time // 2)
        params = {"delta_st": half, "collect_interval": half}
        params.update(overrides)
        return cls(**params)

    @property
    def effective_pending_timeout(self) -> int:
        return self.pending_timeout if self.pending_timeout is not None else 2 * self.delta_st


@dataclass(frozen=True)
class ScoreMessage:
    score: NodeScore
    origin_peer: NodeId

    @property
    def key(self) -> bytes:
        return self.score.signature.value


@dataclass(frozen=True)
class Announcement:
    """A DYNT: only the 64 signature bytes, addressed to one peer"""

    peer: NodeId
    signature: bytes


def sign_score(key: NodeKey, apps, collected_at: int, stale: bool = False) -> NodeScore:
    apps = tuple(sorted(apps, key=lambda a: a.app_id))
    payload = score_signing_payload(key.node_id, apps, collected_at, stale)
    return NodeScore(key.node_id, apps, collected_at, key.sign(payload), stale)


def verify_score(score: NodeScore) -> bool:
    if score.signature.signer != score.node:
        return False
    payload = score_signing_payload(score.node, score.apps, score.collected_at, score.stale)
    return verify(score.signature, payload)


def sign_departure(key: NodeKey, departed_at: int) -> Departure:
    return Departure(key.node_id, departed_at, key.sign(departure_signing_payload(key.node_id, departed_at)))


def verify_departure(departure: Departure) -> bool:
    if departure.signature.signer != departure.node:
        return False
    return verify(departure.signature, departure_signing_payload(departure.node, departure.departed_at))


def _newer(candidate: NodeScore, current: NodeScore) -> bool:
    if candidate.collected_at != current.collected_at:
        return candidate.collected_at > current.collected_at
    return candidate.signature.value < current.signature.value


class ScorePool:
    """Freshest known score per node"""

    def __init__(self):
        self._scores: Dict[NodeId, NodeScore] = {}

    def offer(self, score: NodeScore) -> bool:
        current = self._scores.get(score.node)
        if current is None or _newer(score, current):
            self._scores[score.node] = score
            return True
        return False

    def get(self, node: NodeId) -> Optional[NodeScore]:
        return self._scores.get(node)

    def remove(self, node: NodeId) -> Optional[NodeScore]:
        return self._scores.pop(node, None)

    def nodes(self) -> Tuple[NodeId, ...]:
        return tuple(sorted(self._scores))

    def snapshot(self, now: Optional[int] = None, max_age: Optional[int] = None) -> Tuple[NodeScore, ...]:
        """Scores sorted by node id, optionally only those no older than max_age"""
        scores = (self._scores[n] for n in sorted(self._scores))
        if now is None or max_age is None:
            return tuple(scores)
        return tuple(s for s in scores if now - max_age <= s.collected_at <= now)

    def __contains__(self, node: NodeId) -> bool:
        return node in self._scores

    def __len__(self) -> int:
        return len(self._scores)


class SeenCache:
    """Signatures of fully received or locally originated messages, FIFO-bounded"""

    def __init__(self, capacity: int = 65536):
        self.capacity = capacity
        self._entries: "OrderedDict[bytes, Tuple[int, NodeScore]]" = OrderedDict()

    def add(self, score: NodeScore, now: int) -> None:
        key = score.signature.value
        if key in self._entries:
            return
        self._entries[key] = (now, score)
        while len(self._entries) > self.capacity:
            self._entries.popitem(last=False)

    def payload(self, signature: bytes) -> Optional[NodeScore]:
        entry = self._entries.get(signature)
        return entry[1] if entry else None

    def __contains__(self, signature: bytes) -> bool:
        return signature in self._entries

    def __len__(self) -> int:
        return len(self._entries)


class GossipService:
    """One node's gossip state: pool, seen cache, pending DYNT answers and timers"""

    def __init__(self, key: NodeKey, config: GossipConfig = GossipConfig(), peers: Iterable[NodeId] = ()):
        self.key = key
        self.node_id = key.node_id
        self.config = config
        self.peers = set(peers) - {self.node_id}
        self.pool = ScorePool()
        self.seen = SeenCache(config.seen_cache_capacity)
        self.pending: Dict[bytes, int] = {}
        self.departed: Dict[NodeId, int] = {}
        self.last_broadcast: Optional[int] = None
        self.own_score: Optional[NodeScore] = None
        self.counters: Counter = Counter()

    # --- collection ---------------------------------------------------------

    def collect_local_state(self, runtime: RuntimeAdapter, now: int) -> NodeScore:
        try:
            apps = runtime.list_apps(now)
            score = sign_score(self.key, apps, now)
        except RuntimeUnavailableError as exc:
            previous = self.own_score.apps if self.own_score else ()
            score = sign_score(self.key, previous, now, stale=True)
            self.counters["stale_collections"] += 1
            logger.warning(f"⚠️ runtime unreachable, re-publishing previous score as stale: {exc}")
        self.own_score = score
        self.seen.add(score, now)
        self.pool.offer(score)
        return score

    # --- broadcasting -------------------------------------------------------

    def on_timer(self, now: int) -> List[Announcement]:
        if self.last_broadcast is not None and now - self.last_broadcast < self.config.delta_st:
            return []
        self.last_broadcast = now
        if self.own_score is None:
            return []
        sig = self.own_score.signature.value
        self.counters["dynt_sent"] += len(self.peers)
        return [Announcement(peer, sig) for peer in sorted(self.peers)]

    def announce(self, signature: bytes, peers: Iterable[NodeId]) -> List[Announcement]:
        peers = sorted(peers)
        self.counters["dynt_sent"] += len(peers)
        return [Announcement(peer, signature) for peer in peers]

    def handle_dynt(self, signature: bytes, sender: NodeId, now: int) -> bool:
        """Answer a DYNT: yes only for a message neither seen nor already promised"""
        if signature in self.seen:
            return False
        expires = self.pending.get(signature)
        if expires is not None and now < expires:
            return False
        self.pending[signature] = now + self.config.effective_pending_timeout
        self.counters["dynt_yes"] += 1
        return True

    def payload_for(self, signature: bytes) -> Optional[NodeScore]:
        return self.seen.payload(signature)

    def handle_score(self, msg: ScoreMessage, now: int) -> FrozenSet[NodeId]:
        """Take in a full score; return the peers it should be announced to next"""
        if not verify_score(msg.score):
            self.counters["tampered"] += 1
            logger.warning(f"❌ dropped score for {msg.score.node} from {msg.origin_peer}: bad signature")
            return frozenset()
        key = msg.key
        self.pending.pop(key, None)
        if key in self.seen:
            self.counters["duplicates"] += 1
            return frozenset()
        self.seen.add(msg.score, now)
        self.counters["payloads_received"] += 1
        self.accept_into_pool(msg.score)
        return frozenset(self.peers - {msg.origin_peer})

    def accept_into_pool(self, score: NodeScore) -> bool:
        departed_at = self.departed.get(score.node)
        if departed_at is not None:
            if score.collected_at <= departed_at:
                return False
            del self.departed[score.node]
        return self.pool.offer(score)

    def expire_pending(self, now: int) -> None:
        for sig in [s for s, expires in self.pending.items() if expires <= now]:
            del self.pending[sig]

    # --- membership ---------------------------------------------------------

    def add_peer(self, peer: NodeId) -> None:
        if peer != self.node_id:
            self.peers.add(peer)

    def withdraw(self, now: int) -> None:
        """Stop publishing and drop our own score from the pool"""
        self.pool.remove(self.node_id)
        self.departed[self.node_id] = now
        self.own_score = None

    def remove_node(self, node: NodeId, departed_at: int) -> None:
        self.pool.remove(node)
        self.peers.discard(node)
        self.departed[node] = departed_at
