from dataclasses import replace

import pytest

from app.core.encoding import canonical_encode
from app.core.types import AppDescriptor, fraction
from app.services.gossip import (
    GossipConfig,
    GossipService,
    ScoreMessage,
    ScorePool,
    SeenCache,
    sign_departure,
    verify_departure,
    verify_score,
)
from app.services.runtime import MockRuntime


@pytest.fixture
def peers(make_key):
    return {name: make_key(f"peer-{name}").node_id for name in "PQR"}


@pytest.fixture
def service(make_key, peers):
    return GossipService(make_key("self"), GossipConfig(delta_st=500), peers.values())


def test_config_follows_block_time():
    config = GossipConfig.for_block_time(1000)
    assert config.delta_st == 500
    assert config.collect_interval == 500
    assert config.effective_pending_timeout == 1000
    with pytest.raises(ValueError):
        GossipConfig(delta_st=0)


def test_collect_idle_node(service):
    score = service.collect_local_state(MockRuntime(), 100)
    assert score.apps == ()
    assert score.collected_at == 100
    assert verify_score(score)
    assert service.pool.get(service.node_id) == score


def test_collect_reports_running_apps(service):
    runtime = MockRuntime()
    runtime.start(AppDescriptor("v0", cpu=fraction(0.90), ram=fraction(0.50)))
    runtime.start(AppDescriptor("v3", cpu=fraction(0.56), ram=fraction(0.35)))
    first = service.collect_local_state(runtime, 500)
    again = service.collect_local_state(runtime, 500)
    assert [(a.app_id, a.cpu) for a in first.apps] == [("v0", 900_000), ("v3", 560_000)]
    assert canonical_encode(first) == canonical_encode(again)


def test_unreachable_runtime_republishes_stale(service):
    runtime = MockRuntime()
    runtime.start(AppDescriptor("x", cpu=300_000))
    service.collect_local_state(runtime, 0)
    runtime.available = False
    score = service.collect_local_state(runtime, 500)
    assert score.stale
    assert score.app_ids == ("x",)
    assert score.collected_at == 500
    assert service.counters["stale_collections"] == 1


def test_on_timer_waits_for_delta_st(service):
    service.collect_local_state(MockRuntime(), 0)
    first = service.on_timer(0)
    assert len(first) == 3
    assert all(len(a.signature) == 64 for a in first)
    assert service.on_timer(499) == []
    assert len(service.on_timer(500)) == 3


def test_isolated_node_still_resets_timer(make_key):
    lonely = GossipService(make_key("lonely"), GossipConfig(delta_st=500))
    lonely.collect_local_state(MockRuntime(), 0)
    assert lonely.on_timer(0) == []
    assert lonely.last_broadcast == 0


def test_dynt_answers_yes_once(service, peers, make_key, make_score):
    sig = make_score(make_key("origin"), 1).signature.value
    assert service.handle_dynt(sig, peers["P"], 0)
    assert not service.handle_dynt(sig, peers["Q"], 10)
    # nobody delivered within the pending timeout, ask again
    assert service.handle_dynt(sig, peers["Q"], 1000)


def test_dynt_for_seen_message_is_no(service, peers):
    own = service.collect_local_state(MockRuntime(), 0)
    assert not service.handle_dynt(own.signature.value, peers["P"], 0)


def test_score_forwarded_to_everyone_but_origin(service, peers, make_key, make_score):
    score = make_score(make_key("origin"), 1, [("a", 0.2)])
    forward = service.handle_score(ScoreMessage(score, peers["P"]), 5)
    assert forward == {peers["Q"], peers["R"]}
    assert service.pool.get(score.node) == score
    assert service.handle_score(ScoreMessage(score, peers["Q"]), 6) == frozenset()
    assert service.counters["duplicates"] == 1


def test_older_score_is_forwarded_but_not_pooled(service, peers, make_key, make_score):
    origin = make_key("origin")
    newer = make_score(origin, 200)
    older = make_score(origin, 100)
    service.handle_score(ScoreMessage(newer, peers["P"]), 300)
    assert service.handle_score(ScoreMessage(older, peers["P"]), 301) == {peers["Q"], peers["R"]}
    assert service.pool.get(origin.node_id) == newer


def test_tampered_score_is_dropped(service, peers, make_key, make_score):
    score = replace(make_score(make_key("origin"), 1), collected_at=2)
    assert service.handle_score(ScoreMessage(score, peers["P"]), 5) == frozenset()
    assert service.counters["tampered"] == 1
    assert score.node not in service.pool


def test_pool_keeps_freshest_with_signature_tiebreak(make_key, make_score):
    key = make_key("tie")
    a = make_score(key, 10, [("a", 0.1)])
    b = make_score(key, 10, [("b", 0.1)])
    low, high = sorted([a, b], key=lambda s: s.signature.value)
    pool = ScorePool()
    assert pool.offer(high)
    assert pool.offer(low)
    assert not pool.offer(high)
    assert pool.get(key.node_id) == low
    assert pool.offer(make_score(key, 11))


def test_pool_snapshot_filters_by_age(make_key, make_score):
    pool = ScorePool()
    old, fresh = make_key("old"), make_key("fresh")
    pool.offer(make_score(old, 0))
    pool.offer(make_score(fresh, 1900))
    assert [s.node for s in pool.snapshot(2500, 2000)] == [fresh.node_id]
    assert len(pool.snapshot()) == 2


def test_seen_cache_evicts_oldest(make_key, make_score):
    cache = SeenCache(capacity=2)
    key = make_key("cache")
    scores = [make_score(key, t) for t in range(3)]
    for t, score in enumerate(scores):
        cache.add(score, t)
    assert scores[0].signature.value not in cache
    assert cache.payload(scores[2].signature.value) == scores[2]
    assert len(cache) == 2


def test_departed_node_needs_a_newer_score(service, make_key, make_score):
    gone = make_key("gone")
    service.accept_into_pool(make_score(gone, 100))
    service.remove_node(gone.node_id, 150)
    assert gone.node_id not in service.pool
    assert not service.accept_into_pool(make_score(gone, 140))
    assert service.accept_into_pool(make_score(gone, 160))


def test_departure_signatures(make_key):
    key, other = make_key("leaver"), make_key("other")
    departure = sign_departure(key, 99)
    assert verify_departure(departure)
    assert not verify_departure(replace(departure, departed_at=100))
    assert not verify_departure(replace(departure, node=other.node_id))
