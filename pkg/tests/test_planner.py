from dataclasses import replace
from typing import Dict, List, Tuple

import numpy as np
import pytest

from app.core.encoding import canonical_encode
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
    Signature,
)
from app.services.planner import (
    CPU_ONLY,
    PLACEMENT_ONLY,
    BlockData,
    GreedyPlanner,
    ResourceWeights,
    admit_queue,
    apply_plan,
    find_max_loaded_node,
    find_min_loaded_node,
    generate_plan,
    ledger_view,
    node_load,
)


def unsigned_score(node: NodeId, apps: List[Tuple[str, int]], at: int = 0, stale: bool = False) -> NodeScore:
    """Planner inputs do not need valid signatures"""
    records = tuple(AppRecord(app_id, cpu, 0, 0, 0, at) for app_id, cpu in sorted(apps))
    return NodeScore(node, records, at, Signature(bytes(64), node), stale)


def brute_force_plan(scores, assignments, queue) -> MigrationPlan:
    """Straight-line CPU-only planner for data whose assigned apps are all reported by their node"""
    loads = {score.node: 0 for score in scores}
    owned: Dict[NodeId, list] = {score.node: [] for score in scores}
    queued = {app.app_id for app in queue}
    for score in scores:
        for app in score.apps:
            if app.app_id in queued:
                continue
            loads[score.node] += app.cpu * PPM_ONE
            if app.app_id in assignments:
                owned[score.node].append((app.app_id, app.cpu * PPM_ONE))

    if queue:
        placements = []
        for app in queue:
            target = sorted(loads, key=lambda n: (loads[n], n))[0]
            placements.append(Placement(app.app_id, target))
            loads[target] += app.cpu * PPM_ONE
        return MigrationPlan(placements=tuple(placements))

    lightest = sorted(loads, key=lambda n: (loads[n], n))[0]
    heaviest = sorted(loads, key=lambda n: (-loads[n], n))[0]
    if heaviest == lightest or not owned[heaviest]:
        return MigrationPlan()
    app_id, load = sorted(owned[heaviest], key=lambda a: (-a[1], a[0]))[0]
    before = loads[heaviest] - loads[lightest]
    after = (loads[heaviest] - load) - (loads[lightest] + load)
    if abs(before) > abs(after):
        return MigrationPlan(migration=Migration(app_id, heaviest, lightest))
    return MigrationPlan()


def random_block_data(rng: np.random.Generator, max_nodes: int = 100, max_apps: int = 300) -> BlockData:
    n = int(rng.integers(2, max_nodes, endpoint=True))
    nodes = sorted({NodeId(rng.bytes(32)) for _ in range(n)})
    apps: Dict[NodeId, list] = {node: [] for node in nodes}
    assignments = {}
    queue = []
    empty_queue = rng.random() < 0.8
    for i in range(int(rng.integers(0, max_apps, endpoint=True))):
        cpu = int(rng.integers(1, PPM_ONE))
        kind = rng.random()
        if kind < 0.1 and not empty_queue:
            queue.append(AppDescriptor(f"q{i:03d}", cpu=cpu))
            continue
        node = nodes[int(rng.integers(len(nodes)))]
        apps[node].append((f"a{i:03d}", cpu))
        # a few apps run outside the ledger's control
        if kind >= 0.15:
            assignments[f"a{i:03d}"] = Assignment(node, 0)
    scores = tuple(unsigned_score(node, apps[node]) for node in nodes)
    return BlockData(scores=scores, assignments=assignments, queue=tuple(queue))


# --- loads ---------------------------------------------------------------------

def test_node_load_of_example_nodes(example_ledger):
    by_node = {s.node: s for s in example_ledger.scores}
    assert node_load(by_node[example_ledger.ids["A"]]) == 1_460_000
    assert node_load(by_node[example_ledger.ids["C"]]) == 150_000
    assert node_load(unsigned_score(example_ledger.ids["B"], [])) == 0


def test_weights_must_sum_to_one():
    assert ResourceWeights(cpu=500_000, ram=500_000).raw((2, 4, 0, 0)) == 3_000_000
    with pytest.raises(ValueError):
        ResourceWeights(cpu=500_000)


def test_max_and_min_of_example(example_ledger):
    assert find_max_loaded_node(example_ledger.data) == example_ledger.ids["A"]
    assert find_min_loaded_node(example_ledger.data) == example_ledger.ids["C"]


def test_ties_go_to_smallest_node_id(make_key):
    nodes = sorted(make_key(f"tie-{i}").node_id for i in range(3))
    data = BlockData(scores=tuple(unsigned_score(n, [("x" + n.short(), 100)]) for n in nodes))
    assert find_max_loaded_node(data) == nodes[0]
    assert find_min_loaded_node(data) == nodes[0]


def test_single_node_is_both_max_and_min(make_key):
    node = make_key("solo").node_id
    data = BlockData(scores=(unsigned_score(node, []),))
    assert find_max_loaded_node(data) == find_min_loaded_node(data) == node


def test_empty_block_data_is_malformed():
    with pytest.raises(MalformedBlockDataError):
        find_max_loaded_node(BlockData(scores=()))


def test_unsorted_scores_are_malformed(make_key):
    a, b = sorted([make_key("s1").node_id, make_key("s2").node_id])
    with pytest.raises(MalformedBlockDataError):
        BlockData(scores=(unsigned_score(b, []), unsigned_score(a, [])))


# --- plans ---------------------------------------------------------------------

def test_example_plan_moves_v0_from_a_to_c(example_ledger):
    plan = generate_plan(example_ledger.data)
    assert plan == MigrationPlan(migration=Migration("v0", example_ledger.ids["A"], example_ledger.ids["C"]))
    expected = canonical_encode(plan)
    assert all(canonical_encode(generate_plan(example_ledger.data)) == expected for _ in range(100))
    assert canonical_encode(brute_force_plan(example_ledger.scores, example_ledger.assignments, ())) == expected


def test_balanced_nodes_get_empty_plan(make_key):
    x, y = sorted([make_key("bx").node_id, make_key("by").node_id])
    data = BlockData(
        scores=(unsigned_score(x, [("a", 500_000)]), unsigned_score(y, [("b", 500_000)])),
        assignments={"a": Assignment(x, 0), "b": Assignment(y, 0)},
    )
    assert generate_plan(data).is_empty


def test_queue_drains_onto_least_loaded(make_key):
    keys = {name: make_key(f"q-{name}").node_id for name in "XY"}
    scores = tuple(sorted(
        [unsigned_score(keys["X"], [("busy", 400_000)]), unsigned_score(keys["Y"], [])],
        key=lambda s: s.node,
    ))
    queue = (AppDescriptor("a", cpu=100_000), AppDescriptor("b", cpu=100_000))
    data = BlockData(scores=scores, assignments={"busy": Assignment(keys["X"], 0)}, queue=queue)
    plan = generate_plan(data)
    assert plan.placements == (Placement("a", keys["Y"]), Placement("b", keys["Y"]))
    assert plan.migration is None


def test_unassigned_apps_count_but_never_move(make_key):
    x, y = sorted([make_key("ux").node_id, make_key("uy").node_id])
    data = BlockData(scores=(unsigned_score(x, [("local", 900_000)]), unsigned_score(y, [])))
    assert ledger_view(data)[0][x].raw == 900_000 * PPM_ONE
    assert generate_plan(data).is_empty


def test_placement_only_planner_never_migrates(example_ledger):
    assert PLACEMENT_ONLY.generate(example_ledger.data).is_empty
    assert GreedyPlanner(migrations=False).generate(example_ledger.data) == MigrationPlan()


def test_unreported_app_is_retired_after_settle_window(make_key):
    node = make_key("settle").node_id
    catalog = {"gone": AppDescriptor("gone", cpu=200_000)}
    assignments = {"gone": Assignment(node, 0)}
    waiting = BlockData(
        scores=(unsigned_score(node, [], at=999),), assignments=assignments, catalog=catalog, settle_ms=1000,
    )
    views, retired = ledger_view(waiting)
    assert retired == ()
    assert views[node].raw == 200_000 * PPM_ONE

    settled = replace(waiting, scores=(unsigned_score(node, [], at=1000),))
    plan = generate_plan(settled)
    assert plan.retirements == ("gone",)
    assert apply_plan(settled, plan).assignments == {}


def test_stale_nodes_are_neither_targets_nor_sources(make_key):
    stalled, busy, idle = sorted(make_key(f"stale-{i}").node_id for i in range(3))
    assignments = {"a": Assignment(busy, 0), "b": Assignment(busy, 0), "c": Assignment(idle, 0)}
    fresh = BlockData(
        scores=(
            unsigned_score(stalled, []),
            unsigned_score(busy, [("a", 300_000), ("b", 200_000)]),
            unsigned_score(idle, [("c", 100_000)]),
        ),
        assignments=assignments,
    )
    assert generate_plan(fresh).migration == Migration("a", busy, stalled)

    stale = replace(fresh, scores=(unsigned_score(stalled, [], stale=True),) + fresh.scores[1:])
    assert ledger_view(stale)[0][stalled].stale
    assert find_min_loaded_node(stale) == idle
    assert generate_plan(stale).migration == Migration("a", busy, idle)
    queued = replace(stale, queue=(AppDescriptor("q", cpu=50_000),))
    assert generate_plan(queued).placements == (Placement("q", idle),)

    # an overloaded stale node keeps its apps
    hot = replace(
        fresh,
        scores=(unsigned_score(stalled, [("d", 900_000)], stale=True),) + fresh.scores[1:],
        assignments={**assignments, "d": Assignment(stalled, 0)},
    )
    assert find_max_loaded_node(hot) == busy
    assert generate_plan(hot).migration == Migration("a", busy, idle)

    # with every runtime silent the view is all there is
    silent = replace(fresh, scores=tuple(replace(s, stale=True) for s in fresh.scores))
    assert generate_plan(silent) == generate_plan(fresh)


# --- apply -----------------------------------------------------------------------

def test_apply_example_plan(example_ledger):
    after = apply_plan(example_ledger.data, generate_plan(example_ledger.data), at=1000)
    hosted = lambda node: sorted(a for a, assignment in after.assignments.items() if assignment.node == node)
    assert hosted(example_ledger.ids["A"]) == ["v3"]
    assert hosted(example_ledger.ids["C"]) == ["v0", "v2"]
    assert after.assignments["v0"] == Assignment(example_ledger.ids["C"], 1000)


def test_apply_empty_plan_changes_nothing(example_ledger):
    after = apply_plan(example_ledger.data, MigrationPlan())
    assert after.assignments == example_ledger.data.assignments
    assert after.queue == example_ledger.data.queue


def test_apply_placement(example_ledger):
    data = replace(example_ledger.data, queue=(AppDescriptor("q", cpu=50_000),))
    after = apply_plan(data, MigrationPlan(placements=(Placement("q", example_ledger.ids["D"]),)))
    assert after.queue == ()
    assert after.assignments["q"].node == example_ledger.ids["D"]
    assert after.catalog["q"].cpu == 50_000


def test_apply_rejects_unknown_references(example_ledger, make_key):
    stranger = make_key("stranger").node_id
    with pytest.raises(PlanApplicationError):
        apply_plan(example_ledger.data, MigrationPlan(placements=(Placement("nope", example_ledger.ids["A"]),)))
    with pytest.raises(PlanApplicationError):
        apply_plan(example_ledger.data, MigrationPlan(migration=Migration("v0", example_ledger.ids["A"], stranger)))
    with pytest.raises(PlanApplicationError):
        apply_plan(example_ledger.data, MigrationPlan(migration=Migration("v0", example_ledger.ids["B"], example_ledger.ids["C"])))
    with pytest.raises(PlanApplicationError):
        apply_plan(example_ledger.data, MigrationPlan(retirements=("nope",)))


def test_plan_cannot_mix_placements_and_migration(example_ledger):
    with pytest.raises(ValueError):
        MigrationPlan(
            placements=(Placement("q", example_ledger.ids["A"]),),
            migration=Migration("v0", example_ledger.ids["A"], example_ledger.ids["C"]),
        )


# --- admission ---------------------------------------------------------------------

def test_admission_stops_above_threshold():
    queue = [AppDescriptor(f"a{i}", cpu=300_000) for i in range(5)]
    # two nodes at a mean of 0.8: one app fits, the mean is then 0.95
    admitted = admit_queue(queue, 1_600_000, 2, 900_000)
    assert [a.app_id for a in admitted] == ["a0"]
    assert admit_queue(queue, 0, 1, 900_000) == tuple(queue[:4])
    assert admit_queue(queue, 0, 0, 900_000) == ()


# --- properties -----------------------------------------------------------------------

def test_random_plans_strictly_improve_and_match_brute_force():
    rng = np.random.default_rng(2024)
    migrations = 0
    for _ in range(10_000):
        data = random_block_data(rng)
        plan = generate_plan(data)
        assert not (plan.placements and plan.migration is not None)
        if plan.migration is not None:
            migrations += 1
            views, _ = ledger_view(data)
            source, target = views[plan.migration.source], views[plan.migration.target]
            load = dict(source.apps)[plan.migration.app_id]
            assert abs((source.raw - load) - (target.raw + load)) < abs(source.raw - target.raw)
    assert migrations > 1000


def test_planner_agrees_with_brute_force():
    rng = np.random.default_rng(99)
    for _ in range(500):
        data = random_block_data(rng, max_nodes=20, max_apps=60)
        expected = brute_force_plan(data.scores, data.assignments, data.queue)
        assert canonical_encode(generate_plan(data)) == canonical_encode(expected)


def test_queue_placements_always_pick_a_least_loaded_node():
    rng = np.random.default_rng(5)
    checked = 0
    while checked < 200:
        data = random_block_data(rng, max_nodes=10, max_apps=40)
        plan = generate_plan(data)
        if not plan.placements:
            continue
        views, _ = ledger_view(data)
        loads = {node: view.raw for node, view in views.items()}
        declared = {app.app_id: app.cpu * PPM_ONE for app in data.queue}
        for placement in plan.placements:
            assert loads[placement.node] == min(loads.values())
            loads[placement.node] += declared[placement.app_id]
        checked += 1


def test_applying_a_plan_conserves_load():
    rng = np.random.default_rng(11)
    for _ in range(200):
        data = random_block_data(rng, max_nodes=10, max_apps=40)
        plan = generate_plan(data)
        before = sum(view.raw for view in ledger_view(data)[0].values())
        added = sum(app.cpu * PPM_ONE for app in data.queue)
        # placed apps are not reported yet and count at their declared load
        after = apply_plan(data, plan)
        total = sum(view.raw for view in ledger_view(after)[0].values())
        assert total == before + added


def test_cpu_only_is_default_weighting(example_ledger):
    assert example_ledger.data.weights == CPU_ONLY
