"""
Shared-ledger network model.

Delivery is instant and reliable, so every live node holds the same pool and
the same chain and the simulation keeps a single copy of each. Every block is
still produced by the elected leader's key, and the next online node verifies
the bytes it would have received before the block is applied. Sends are
counted per node as the full-mesh floods would make them: a DYNT flood of
every node score plus one block flood per round.
"""

from collections import Counter
from typing import Dict, List, Optional

import numpy as np

from app.core.crypto import NodeKey
from app.core.encoding import canonical_encode, decode_block
from app.core.errors import EdgeLedgerError, SimulationError
from app.core.types import Block, NodeId
from app.services.consensus import (
    DEFAULT_ELECTION,
    ActionKind,
    ChainParams,
    ChainState,
    block_actions,
    create_block,
    verify_block,
)
from app.services.gossip import ScorePool, sign_score
from app.services.migration import MigrationOutcome, accept_migration, migrate_app
from app.services.planner import MigrationPlanner, admit_queue
from app.services.runtime import MockRuntime
from app.sim.apps import AppState, SimApp, sample_arrivals
from app.sim.config import SimConfig
from app.sim.metrics import MetricsRow, MetricsSeries
from app.utils.logger import setup_logging

logger = setup_logging("edge.sim")


def node_keys(config: SimConfig) -> List[NodeKey]:
    return [NodeKey.from_seed(f"sim-{config.seed}-{i}") for i in range(config.node_count)]


class SharedLedgerSimulation:

    def __init__(self, config: SimConfig, planner: Optional[MigrationPlanner] = None):
        self.config = config
        arrival_seed, _, crash_seed = np.random.SeedSequence(config.seed).spawn(3)
        self.arrival_rng = np.random.default_rng(arrival_seed)
        crash_rng = np.random.default_rng(crash_seed)

        self.keys = node_keys(config)
        self.index: Dict[NodeId, int] = {key.node_id: i for i, key in enumerate(self.keys)}
        self.runtimes = [MockRuntime() for _ in self.keys]
        self.alive = [True] * config.node_count

        self.params = ChainParams(block_time=config.block_time, migrations=config.migration_enabled)
        self.chain = ChainState(self.params)
        self.planner = planner or self.params.planner
        self.pool = ScorePool()

        self.apps: Dict[str, SimApp] = {}
        self.queue: List[SimApp] = []
        self.metrics = MetricsSeries(config.node_count)
        # messages and payload bytes each node has sent
        self.sent: Counter = Counter()
        self.sent_bytes: Counter = Counter()
        self.verified_by: Counter = Counter()
        self.crash_height = config.resolve_crash_height(crash_rng)
        self.now = 2 * config.block_time

    # --- membership -----------------------------------------------------------

    def online(self, height: int) -> List[int]:
        skewed = height < self.config.skew_placement
        return [i for i in range(self.config.node_count) if self.alive[i] and (i == 0 or not skewed)]

    def crash(self, i: int) -> None:
        self.alive[i] = False
        runtime = self.runtimes[i]
        for app_id in runtime.app_ids():
            runtime.remove(app_id)
            self.apps[app_id].state = AppState.MIGRATING
            self.apps[app_id].node = None
        logger.debug(f"💥 node {i} crashed at height {self.chain.next_height}")

    # --- one round --------------------------------------------------------------

    def run(self) -> MetricsSeries:
        for height in range(self.config.blocks):
            self.step(height)
        return self.metrics

    def step(self, height: int) -> Block:
        if height >= 1:
            for app in sample_arrivals(self.arrival_rng, self.config, height):
                self.apps[app.app_id] = app
                self.queue.append(app)

        retry, leader = self._elect(height)
        online = self.online(height)
        messages, payload = sum(self.sent.values()), sum(self.sent_bytes.values())
        for i in online:
            score = sign_score(self.keys[i], self.runtimes[i].list_apps(self.now), self.now)
            self.pool.offer(score)
            self._flood(i, online, len(canonical_encode(score)), announced=True)

        running_cpu = sum(app.cpu for app in self.apps.values() if app.state == AppState.RUNNING)
        admitted = admit_queue(
            [app.descriptor for app in self.queue],
            running_cpu,
            sum(self.alive),
            self.config.admission_threshold,
        )
        block = create_block(
            self.chain, self.pool, admitted, self.keys[leader], self.now, retry, planner=self.planner
        )
        self._flood(leader, online, len(canonical_encode(block)), announced=False)
        self._verify(block, leader, online)
        migrations = self._apply(block, online)

        placed = {p.app_id for p in block.plan.placements}
        self.queue = [app for app in self.queue if app.app_id not in placed]
        self.metrics.append(MetricsRow(
            height=height,
            loads=[self.runtimes[i].total_cpu() if i in online else None for i in range(self.config.node_count)],
            queue_length=len(self.queue),
            running_apps=sum(1 for app in self.apps.values() if app.state == AppState.RUNNING),
            migrations=migrations,
            messages_sent=sum(self.sent.values()) - messages,
            payload_bytes=sum(self.sent_bytes.values()) - payload,
        ))

        for app in self.apps.values():
            if app.tick():
                self.runtimes[app.node].remove(app.app_id)
        self.now = block.timestamp + self.config.block_time
        return block

    def _elect(self, height: int):
        retry = 0
        while True:
            bootstrap = [self.keys[i].node_id for i in self.online(height)]
            leader = self.index[DEFAULT_ELECTION.elect(self.chain.election_input(retry, bootstrap))]
            if height == self.crash_height and retry == 0 and self.alive[leader]:
                self.crash(leader)
            if self.alive[leader]:
                return retry, leader
            retry += 1
            self.now += 2 * self.config.block_time

    def _flood(self, origin: int, online: List[int], size: int, announced: bool) -> None:
        """Count the sends of one flood from origin; receivers forward to everyone but their sender"""
        forwards = len(online) - 2
        for receiver in online:
            if receiver == origin:
                continue
            self.sent[origin] += 1
            self.sent_bytes[origin] += size
            if announced:
                # the DYNT before the payload, the yes reply, then one no to every other receiver's DYNT
                self.sent[origin] += 1
                self.sent[receiver] += 1 + 2 * forwards
            else:
                self.sent[receiver] += forwards
                self.sent_bytes[receiver] += forwards * size

    def _verify(self, block: Block, leader: int, online: List[int]) -> None:
        """The node after the leader checks the block as it arrives on the wire"""
        position = online.index(leader) if leader in online else -1
        verifier = online[(position + 1) % len(online)]
        verdict = verify_block(decode_block(canonical_encode(block)), self.chain, planner=self.planner)
        self.verified_by[verifier] += 1
        if not verdict.accepted:
            raise SimulationError(
                f"node {verifier} rejected block {block.height} from node {leader}: "
                f"{verdict.reason.value} {verdict.detail}"
            )

    def _apply(self, block: Block, online: List[int]) -> int:
        catalog = dict(self.chain.catalog)
        actions = {i: block_actions(block, catalog, self.keys[i].node_id) for i in online}
        self.chain.append(block)
        migrations = 0
        for i in online:
            for action in actions[i]:
                try:
                    if action.kind == ActionKind.START:
                        self.runtimes[i].start(action.app)
                        self._placed(action.app_id, i)
                    elif action.kind == ActionKind.CHECKPOINT_AND_SEND:
                        outcome = migrate_app(action.app, action.peer, self.keys[i].node_id, self.runtimes[i], self._send)
                        migrations += outcome == MigrationOutcome.MOVED
                except EdgeLedgerError as exc:
                    logger.error(f"❌ node {i} could not {action.kind.value} {action.app_id}: {exc}")
        return migrations

    def _send(self, target: NodeId, transfer) -> bool:
        j = self.index[target]
        if not self.alive[j] or not accept_migration(transfer, self.runtimes[j]):
            return False
        self._placed(transfer.app.app_id, j)
        return True

    def _placed(self, app_id: str, node: int) -> None:
        app = self.apps.get(app_id)
        if app is not None:
            app.state = AppState.RUNNING
            app.node = node
