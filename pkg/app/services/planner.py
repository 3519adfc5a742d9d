"""
Deterministic migration plan generation.

Every node runs the same planner over the same block data and must get a
byte-identical plan, so everything here is integer arithmetic over immutable
inputs with explicit tie-breaking (lowest NodeId, then lowest app_id).

Node loads come from the ledger view: the chain's assignment map says which
node an app belongs to, and the freshest score reporting the app says how much
it consumes. Apps nobody reports yet count at their declared load until their
node has had a settle window to report them; after that they are retired.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from app.core.errors import MalformedBlockDataError, PlanApplicationError
from app.core.types import (
    PPM_ONE,
    AppDescriptor,
    AppRecord,
    Assignment,
    Migration,
    MigrationPlan,
    NodeId,
    NodeScore,
    Placement,
    ResourceFraction,
)


@dataclass(frozen=True)
class ResourceWeights:
    """Per-resource weights in ppm, summing to one million"""

    cpu: int = PPM_ONE
    ram: int = 0
    disk: int = 0
    network: int = 0

    def __post_init__(self):
        values = (self.cpu, self.ram, self.disk, self.network)
        if any(w < 0 for w in values) or sum(values) != PPM_ONE:
            raise ValueError(f"weights must be non-negative and sum to {PPM_ONE}, got {values}")

    def as_tuple(self) -> Tuple[int, int, int, int]:
        return (self.cpu, self.ram, self.disk, self.network)

    def raw(self, vector: Tuple[int, int, int, int]) -> int:
        """Weighted load scaled by PPM_ONE; exact, and additive over apps"""
        return sum(w * v for w, v in zip(self.as_tuple(), vector))


CPU_ONLY = ResourceWeights()


@dataclass(frozen=True)
class BlockData:
    scores: Tuple[NodeScore, ...]
    assignments: Mapping[str, Assignment] = field(default_factory=dict)
    queue: Tuple[AppDescriptor, ...] = ()
    catalog: Mapping[str, AppDescriptor] = field(default_factory=dict)
    weights: ResourceWeights = CPU_ONLY
    settle_ms: int = 1000

    def __post_init__(self):
        nodes = [s.node for s in self.scores]
        if any(a >= b for a, b in zip(nodes, nodes[1:])):
            raise MalformedBlockDataError("scores must be sorted by node id without duplicates")
        queued = [a.app_id for a in self.queue]
        if len(set(queued)) != len(queued):
            raise MalformedBlockDataError("queue holds the same app twice")


@dataclass
class NodeView:
    node: NodeId
    raw: int = 0
    # (app_id, raw load) of the apps the ledger assigns here; only these may migrate
    apps: List[Tuple[str, int]] = field(default_factory=list)
    # the node re-published its last score because its runtime did not answer
    stale: bool = False


def node_load(score: NodeScore, weights: ResourceWeights = CPU_ONLY) -> ResourceFraction:
    raw = sum(weights.raw(app.vector()) for app in score.apps)
    return ResourceFraction(raw // PPM_ONE)


def _freshest_reports(scores: Tuple[NodeScore, ...]) -> Dict[str, AppRecord]:
    best: Dict[str, Tuple[int, NodeId, AppRecord]] = {}
    for score in scores:
        for app in score.apps:
            current = best.get(app.app_id)
            # newer collection wins; on equal times the lower node id, which came first
            if current is None or score.collected_at > current[0]:
                best[app.app_id] = (score.collected_at, score.node, app)
    return {app_id: entry[2] for app_id, entry in best.items()}


def ledger_view(data: BlockData) -> Tuple[Dict[NodeId, NodeView], Tuple[str, ...]]:
    """Per-node loads as the ledger sees them, plus the apps to retire"""
    present = {score.node: score for score in data.scores}
    views = {node: NodeView(node, stale=score.stale) for node, score in present.items()}
    queued = {app.app_id for app in data.queue}
    reports = _freshest_reports(data.scores)
    weights = data.weights

    for score in data.scores:
        for app in score.apps:
            if app.app_id in queued or app.app_id in data.assignments:
                continue
            views[score.node].raw += weights.raw(app.vector())

    retired = []
    for app_id in sorted(data.assignments):
        assignment = data.assignments[app_id]
        if assignment.node not in views or app_id in queued:
            continue
        record = reports.get(app_id)
        if record is not None:
            raw = weights.raw(record.vector())
        elif present[assignment.node].collected_at >= assignment.since + data.settle_ms:
            retired.append(app_id)
            continue
        elif app_id in data.catalog:
            raw = weights.raw(data.catalog[app_id].vector())
        else:
            raw = 0
        view = views[assignment.node]
        view.raw += raw
        view.apps.append((app_id, raw))

    return views, tuple(retired)


def _selectable(views: Dict[NodeId, NodeView]) -> Dict[NodeId, NodeView]:
    """Views eligible as max or min node: stale nodes only when nothing else is left"""
    fresh = {node: view for node, view in views.items() if not view.stale}
    return fresh or views


def _max_view(views: Dict[NodeId, NodeView]) -> NodeView:
    return min(views.values(), key=lambda v: (-v.raw, v.node))


def _min_view(views: Dict[NodeId, NodeView]) -> NodeView:
    return min(views.values(), key=lambda v: (v.raw, v.node))


def find_max_loaded_node(data: BlockData) -> NodeId:
    if not data.scores:
        raise MalformedBlockDataError("block data holds no scores")
    views, _ = ledger_view(data)
    return _max_view(_selectable(views)).node


def find_min_loaded_node(data: BlockData) -> NodeId:
    if not data.scores:
        raise MalformedBlockDataError("block data holds no scores")
    views, _ = ledger_view(data)
    return _min_view(_selectable(views)).node


class MigrationPlanner(ABC):
    """Anything that maps block data to a plan deterministically"""

    @abstractmethod
    def generate(self, data: BlockData) -> MigrationPlan:
        ...


class GreedyPlanner(MigrationPlanner):
    """
    Drain the queue onto the least loaded nodes, or, when nothing is queued,
    move the heaviest app of the most loaded node to the least loaded node if
    that strictly shrinks the gap between them.

    Nodes whose score is flagged stale keep their load in the view but are
    neither placement targets nor migration endpoints while a fresh node exists.

    With migrations disabled only the queue-drain half runs; the simulator
    uses that as its no-rebalancing baseline.
    """

    def __init__(self, migrations: bool = True):
        self.migrations = migrations

    def generate(self, data: BlockData) -> MigrationPlan:
        if not data.scores:
            return MigrationPlan()

        views, retired = ledger_view(data)
        eligible = _selectable(views)

        if data.queue:
            loads = {node: view.raw for node, view in eligible.items()}
            placements = []
            for app in data.queue:
                target = min(loads, key=lambda n: (loads[n], n))
                placements.append(Placement(app.app_id, target))
                loads[target] += data.weights.raw(app.vector())
            return MigrationPlan(placements=tuple(placements), retirements=retired)

        if not self.migrations:
            return MigrationPlan(retirements=retired)

        heaviest = _max_view(eligible)
        lightest = _min_view(eligible)
        if heaviest.node == lightest.node or not heaviest.apps:
            return MigrationPlan(retirements=retired)

        app_id, app_raw = min(heaviest.apps, key=lambda a: (-a[1], a[0]))
        current_delta = heaviest.raw - lightest.raw
        future_delta = (heaviest.raw - app_raw) - (lightest.raw + app_raw)
        if abs(current_delta) > abs(future_delta):
            return MigrationPlan(
                migration=Migration(app_id, heaviest.node, lightest.node),
                retirements=retired,
            )
        return MigrationPlan(retirements=retired)


DEFAULT_PLANNER = GreedyPlanner()
PLACEMENT_ONLY = GreedyPlanner(migrations=False)


def generate_plan(data: BlockData) -> MigrationPlan:
    return DEFAULT_PLANNER.generate(data)


def apply_plan(data: BlockData, plan: MigrationPlan, at: Optional[int] = None) -> BlockData:
    """
    Return the block data after the plan has been carried out.

    Args:
        data: block data the plan was generated from
        plan: plan to apply
        at: timestamp recorded on new assignments (defaults to the newest
            score in data)

    Raises:
        PlanApplicationError: the plan references an unknown app or node
    """
    if at is None:
        at = max((s.collected_at for s in data.scores), default=0)
    present = {score.node for score in data.scores}
    queued = {app.app_id: app for app in data.queue}
    assignments = dict(data.assignments)
    catalog = dict(data.catalog)

    for app_id in plan.retirements:
        if app_id not in assignments:
            raise PlanApplicationError(f"cannot retire unassigned app {app_id}")
        del assignments[app_id]
        catalog.pop(app_id, None)

    placed = set()
    for placement in plan.placements:
        app = queued.get(placement.app_id)
        if app is None or placement.app_id in placed:
            raise PlanApplicationError(f"app {placement.app_id} is not queued")
        if placement.node not in present:
            raise PlanApplicationError(f"unknown node {placement.node}")
        assignments[app.app_id] = Assignment(placement.node, at)
        catalog[app.app_id] = app
        placed.add(app.app_id)

    migration = plan.migration
    if migration is not None:
        current = assignments.get(migration.app_id)
        if current is None:
            raise PlanApplicationError(f"cannot migrate unassigned app {migration.app_id}")
        if current.node != migration.source:
            raise PlanApplicationError(
                f"app {migration.app_id} is on {current.node}, not {migration.source}"
            )
        if migration.target not in present:
            raise PlanApplicationError(f"unknown node {migration.target}")
        assignments[migration.app_id] = Assignment(migration.target, at)

    queue = tuple(app for app in data.queue if app.app_id not in placed)
    return replace(data, assignments=assignments, queue=queue, catalog=catalog)


def admit_queue(
    queue: Sequence[AppDescriptor],
    total_load: int,
    nodes: int,
    threshold: int,
    weights: ResourceWeights = CPU_ONLY,
) -> Tuple[AppDescriptor, ...]:
    """
    Longest queue prefix admitted while the mean load stays at or below threshold.

    Each app is admitted if the mean load before it is at most threshold, so
    admitting the last one may take the mean above it.
    """
    admitted = []
    if nodes <= 0:
        return ()
    for app in queue:
        if total_load > threshold * nodes:
            break
        admitted.append(app)
        total_load += weights.raw(app.vector()) // PPM_ONE
    return tuple(admitted)
