"""
Gossip network model: every node is a full NodeEngine and every message
travels over a link with its own fixed delay.

The first live node is the observer. Each time its chain grows the
simulation records a metrics row, advances app lifetimes and submits the
next block's arrivals to the nodes they arrive at.
"""

from collections import Counter
from typing import Dict, List, Optional, Set, Tuple

import numpy as np

from app.core.types import NodeId
from app.core.wire import MessageKind, MigrationTransfer, encode_message
from app.services.consensus import DEFAULT_ELECTION
from app.services.node_engine import Envelope, NodeConfig, NodeEngine
from app.services.planner import MigrationPlanner
from app.services.runtime import MockRuntime
from app.sim.apps import AppState, SimApp, sample_arrivals
from app.sim.config import SimConfig
from app.sim.events import EventQueue
from app.sim.metrics import MetricsRow, MetricsSeries
from app.sim.shared import node_keys
from app.utils.logger import setup_logging

logger = setup_logging("edge.sim")

PAYLOAD_KINDS = {MessageKind.SCORE, MessageKind.BLOCK, MessageKind.APP, MessageKind.LEAVE, MessageKind.MIGRATE}

TICK = "tick"
DELIVER = "deliver"


def build_topology(node_count: int, peer_degree: Optional[int], rng: np.random.Generator) -> List[Set[int]]:
    """Full mesh, or a ring topped up with random links until every node has peer_degree peers"""
    if peer_degree is None:
        return [set(range(node_count)) - {i} for i in range(node_count)]
    adjacency = [set() for _ in range(node_count)]
    for i in range(node_count):
        j = (i + 1) % node_count
        if i != j:
            adjacency[i].add(j)
            adjacency[j].add(i)
    for i in range(node_count):
        while len(adjacency[i]) < peer_degree:
            j = int(rng.integers(node_count))
            if j != i:
                adjacency[i].add(j)
                adjacency[j].add(i)
    return adjacency


def link_delays(adjacency: List[Set[int]], low: int, high: int, rng: np.random.Generator) -> Dict[Tuple[int, int], int]:
    delays = {}
    for i, peers in enumerate(adjacency):
        for j in sorted(peers):
            if i < j:
                delay = int(rng.integers(low, high, endpoint=True))
                delays[(i, j)] = delays[(j, i)] = delay
    return delays


class GossipNetworkSimulation:

    def __init__(self, config: SimConfig, planner: Optional[MigrationPlanner] = None):
        self.config = config
        arrival_seed, network_seed, crash_seed = np.random.SeedSequence(config.seed).spawn(3)
        self.arrival_rng = np.random.default_rng(arrival_seed)
        network_rng = np.random.default_rng(network_seed)
        self.crash_height = config.resolve_crash_height(np.random.default_rng(crash_seed))

        n = config.node_count
        self.keys = node_keys(config)
        self.ids: List[NodeId] = [key.node_id for key in self.keys]
        self.index: Dict[NodeId, int] = {node: i for i, node in enumerate(self.ids)}
        self.runtimes = [MockRuntime() for _ in range(n)]
        self.adjacency = build_topology(n, config.peer_degree, network_rng)
        self.delays = link_delays(self.adjacency, config.latency.low_ms, config.latency.high_ms, network_rng)

        node_config = NodeConfig(
            block_time=config.block_time,
            admission_threshold=config.admission_threshold,
            migrations=config.migration_enabled,
        )
        self.engines = [
            NodeEngine(
                self.keys[i],
                self.runtimes[i],
                node_config,
                peers=[self.ids[j] for j in sorted(self.adjacency[i])],
                planner=planner,
                send_migration=self._send_migration,
            )
            for i in range(n)
        ]

        self.events = EventQueue()
        self.scheduled: List[Optional[int]] = [None] * n
        self.apps: Dict[str, SimApp] = {}
        self.metrics = MetricsSeries(n)
        self.end_time = node_config.genesis_wait + (config.blocks + 10) * node_config.round_timeout

        self.messages = 0
        self.payload_bytes = 0
        self.migrations = 0
        self._last_totals = (0, 0, 0)
        # (receiver, signature) -> full score payloads delivered
        self.payload_receipts: Counter = Counter()
        self.score_transmissions: Counter = Counter()
        self.score_origins: Dict[bytes, Tuple[int, int]] = {}

    # --- event loop ---------------------------------------------------------------

    def run(self) -> MetricsSeries:
        for i in range(self.config.node_count):
            self._schedule(i, 0)
        while len(self.metrics) < self.config.blocks:
            event = self.events.pop()
            if event is None or event.time > self.end_time:
                logger.warning(f"⚠️ simulation stopped at height {len(self.metrics)} of {self.config.blocks}")
                break
            i = event.node
            engine = self.engines[i]
            if event.kind == TICK:
                if self.scheduled[i] != event.time or not engine.running:
                    continue
                self.scheduled[i] = None
                out = engine.tick(event.time)
                self._record_origin(i)
            else:
                envelope, sender = event.data
                if not engine.running:
                    continue
                if envelope.kind == MessageKind.SCORE:
                    self.payload_receipts[(i, envelope.body.signature.value)] += 1
                out = engine.receive(envelope.kind, envelope.body, self.ids[sender], event.time)
            self._send(i, out, event.time)
            self._reschedule(i, event.time)
            self._observe(event.time)
        return self.metrics

    def _schedule(self, i: int, time: int) -> None:
        self.scheduled[i] = time
        self.events.push(time, TICK, i)

    def _reschedule(self, i: int, now: int) -> None:
        engine = self.engines[i]
        if not engine.running:
            return
        wakeup = max(now, engine.next_wakeup())
        if self.scheduled[i] is None or wakeup < self.scheduled[i]:
            self._schedule(i, wakeup)

    def _send(self, i: int, envelopes: List[Envelope], now: int) -> None:
        for envelope in envelopes:
            j = self.index[envelope.to]
            self.messages += 1
            if envelope.kind in PAYLOAD_KINDS:
                self.payload_bytes += envelope.size
            if envelope.kind == MessageKind.SCORE:
                self.score_transmissions[envelope.body.signature.value] += 1
            self.events.push(now + self.delays[(i, j)], DELIVER, j, (envelope, i))

    def _record_origin(self, i: int) -> None:
        score = self.engines[i].gossip.own_score
        if score is not None and score.signature.value not in self.score_origins:
            self.score_origins[score.signature.value] = (i, score.collected_at)

    def _send_migration(self, target: NodeId, transfer: MigrationTransfer) -> bool:
        """Checkpoints are handed over synchronously; a crashed target refuses them"""
        j = self.index[target]
        self.messages += 1
        self.payload_bytes += len(encode_message(MessageKind.MIGRATE, transfer))
        if not self.engines[j].running or not self.engines[j].accept_migration(transfer):
            return False
        self.migrations += 1
        return True

    # --- block boundaries -------------------------------------------------------------

    @property
    def observer(self) -> Optional[NodeEngine]:
        return next((engine for engine in self.engines if engine.running), None)

    @property
    def chain(self):
        engine = self.observer or self.engines[0]
        return engine.chain

    def _observe(self, now: int) -> None:
        engine = self.observer
        while engine is not None and len(self.metrics) < min(len(engine.chain.blocks), self.config.blocks):
            self._on_block(len(self.metrics), engine, now)
            engine = self.observer

    def _on_block(self, height: int, observer: NodeEngine, now: int) -> None:
        self._sync_apps()
        messages, payload, migrations = self._deltas()
        self.metrics.append(MetricsRow(
            height=height,
            loads=[rt.total_cpu() if eng.running else None for rt, eng in zip(self.runtimes, self.engines)],
            queue_length=len(observer.queue),
            running_apps=sum(1 for app in self.apps.values() if app.state == AppState.RUNNING),
            migrations=migrations,
            messages_sent=messages,
            payload_bytes=payload,
        ))

        for app in self.apps.values():
            if app.tick():
                self.runtimes[app.node].remove(app.app_id)

        if self.crash_height == height + 1:
            chain = observer.chain
            leader = DEFAULT_ELECTION.elect(chain.election_input(0, [observer.node_id]))
            self.crash(self.index[leader])

        if height + 1 < self.config.blocks:
            for app in sample_arrivals(self.arrival_rng, self.config, height + 1):
                self.apps[app.app_id] = app
                target = app.arrival_node if self.engines[app.arrival_node].running else self.index[self.observer.node_id]
                self._send(target, self.engines[target].submit_app(app.descriptor, now), now)

    def _deltas(self) -> Tuple[int, int, int]:
        totals = (self.messages, self.payload_bytes, self.migrations)
        deltas = tuple(now - before for now, before in zip(totals, self._last_totals))
        self._last_totals = totals
        return deltas

    def _sync_apps(self) -> None:
        location = {}
        for j, runtime in enumerate(self.runtimes):
            if self.engines[j].running:
                for app_id in runtime.app_ids():
                    location[app_id] = j
        for app_id, app in self.apps.items():
            if app.state == AppState.DONE:
                # a finished app re-placed off a crashed node does not run again
                if app_id in location:
                    self.runtimes[location[app_id]].remove(app_id)
                continue
            if app_id in location:
                app.state = AppState.RUNNING
                app.node = location[app_id]
            elif app.state == AppState.RUNNING:
                app.state = AppState.MIGRATING
                app.node = None

    def crash(self, i: int) -> None:
        engine = self.engines[i]
        engine.running = False
        self.scheduled[i] = None
        for app_id in self.runtimes[i].app_ids():
            self.runtimes[i].remove(app_id)
        logger.debug(f"💥 node {i} ({engine.node_id}) crashed before height {engine.chain.next_height}")
