import time
from contextlib import ExitStack
from types import SimpleNamespace

import pytest
from fastapi.testclient import TestClient

from app.config import NodeSettings, load_or_create_key
from app.core.crypto import NodeKey
from app.core.encoding import decode_block
from app.core.types import AppDescriptor
from app.core.wire import MessageKind, encode_message
from app.dto.dtos import DepartureDocument, ScoreDocument, b64decode
from app.main import build_service, create_app
from app.services.gossip import sign_departure, sign_score
from app.services.migration import MigrationOutcome, migrate_app
from app.services.node_service import wall_clock_ms
from app.services.transport import NODE_ID_HEADER, LoopbackTransport

BLOCK_TIME_MS = 500


def wait_for(condition, timeout: float = 20.0, interval: float = 0.05) -> bool:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if condition():
            return True
        time.sleep(interval)
    return condition()


def node_settings(key_file, url, peers=(), genesis_delay_ms=2000) -> NodeSettings:
    return NodeSettings(
        key_file=key_file,
        advertise_url=url,
        peers=list(peers),
        block_time_ms=BLOCK_TIME_MS,
        genesis_delay_ms=genesis_delay_ms,
        chain_file=None,
        database_url="sqlite://",
    )


def foreign(name: str, age_ms: int = 10_000):
    """A key and a signed score old enough to stay out of block snapshots"""
    key = NodeKey.from_seed(f"daemon-{name}")
    score = sign_score(key, [], wall_clock_ms() - age_ms)
    return key, ScoreDocument.from_score(score).model_dump()


def departure_document(key: NodeKey, **changes) -> dict:
    document = DepartureDocument.from_departure(sign_departure(key, wall_clock_ms())).model_dump()
    document.update(changes)
    return document


# --- one node ------------------------------------------------------------------------

@pytest.fixture
def solo(tmp_path):
    clients = {}
    key_file = tmp_path / "solo.key"
    key = load_or_create_key(key_file)
    service = build_service(
        node_settings(key_file, "http://solo", genesis_delay_ms=BLOCK_TIME_MS),
        transport=LoopbackTransport(key.node_id, clients),
    )
    with TestClient(create_app(service), base_url="http://solo") as client:
        clients["http://solo"] = client
        yield SimpleNamespace(service=service, client=client, key=key)


def test_node_representation(solo):
    body = solo.client.get("/node").json()
    assert body["node_id"] == solo.key.node_id.hex()
    assert body["url"] == "http://solo"
    assert body["running"] is True
    assert body["peers"] == []
    assert set(body["chain"]) == {"length", "head"}


def test_solo_node_builds_a_chain(solo):
    assert wait_for(lambda: solo.client.get("/node").json()["chain"]["length"] >= 3)
    page = solo.client.get("/chain", params={"start": 1, "limit": 2}).json()
    assert [decode_block(b64decode(b)).height for b in page["blocks"]] == [1, 2]
    assert page["length"] >= 3
    assert solo.client.get("/chain", params={"limit": 65}).status_code == 422


def test_join_then_update(solo):
    key, document = foreign("joiner")
    assert solo.client.post("/shared", json=document).status_code == 201
    assert solo.client.post("/shared", json=document).status_code == 409
    assert solo.client.put("/shared", json=document).status_code == 200

    _, older = foreign("joiner", age_ms=20_000)
    response = solo.client.put("/shared", json=older)
    assert response.status_code == 200
    assert response.json()["status"] == "unchanged"
    assert solo.service.engine.gossip.pool.get(key.node_id).collected_at == document["collected_at"]


def test_bad_score_documents(solo):
    _, document = foreign("tamper")
    tampered = dict(document, collected_at=document["collected_at"] + 1)
    assert solo.client.put("/shared", json=tampered).status_code == 401
    assert solo.client.post("/shared", json=tampered).status_code == 401
    assert solo.client.put("/shared", json=dict(document, node="zz")).status_code == 422
    assert solo.client.put("/shared", json=dict(document, signature="AAAA")).status_code == 422


def test_p2p_checks_sender_and_body(solo):
    stranger = NodeKey.from_seed("daemon-stranger")
    dynt = encode_message(MessageKind.DYNT, bytes(64))
    headers = {NODE_ID_HEADER: stranger.node_id.hex()}
    assert solo.client.post("/p2p", content=dynt, headers=headers).status_code == 403
    assert solo.client.post("/p2p", content=b"\x7f", headers=headers).status_code == 422
    assert solo.client.post("/p2p", content=dynt).status_code == 422

    key, document = foreign("peer")
    solo.client.post("/shared", json=dict(document, url="http://nowhere"))
    response = solo.client.post("/p2p", content=dynt, headers={NODE_ID_HEADER: key.node_id.hex()})
    assert response.status_code == 200
    assert response.json() == {"accepted": True}


def test_departures(solo):
    key, document = foreign("leaver")
    other = NodeKey.from_seed("daemon-other")
    solo.client.post("/shared", json=document)
    path = f"/node/{key.node_id.hex()}"

    unknown = NodeKey.from_seed("daemon-unknown")
    assert solo.client.request(
        "DELETE", f"/node/{unknown.node_id.hex()}", json=departure_document(unknown)
    ).status_code == 404
    assert solo.client.request(
        "DELETE", path, json=departure_document(other, node=key.node_id.hex())
    ).status_code == 403
    forged = departure_document(key)
    forged["departed_at"] += 1
    assert solo.client.request("DELETE", path, json=forged).status_code == 401
    assert solo.client.request("DELETE", "/node/not-hex", json=departure_document(key)).status_code == 422

    assert solo.client.request("DELETE", path, json=departure_document(key)).status_code == 200
    assert key.node_id not in solo.service.engine.gossip.pool


def test_apps_endpoint(solo):
    response = solo.client.post("/apps", json={"app_id": "svc", "cpu": 200_000})
    assert response.status_code == 202
    assert wait_for(lambda: solo.service.runtime.has_app("svc"))
    running = solo.client.get("/apps").json()["running"]
    assert [app["app_id"] for app in running] == ["svc"]
    assert solo.client.post("/apps", json={"app_id": "svc", "cpu": 200_000}).status_code == 409
    assert solo.client.post("/apps", json={"app_id": "", "cpu": 1}).status_code == 422


# --- four nodes ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def cluster(tmp_path_factory):
    root = tmp_path_factory.mktemp("cluster")
    clients, services, keys = {}, [], []
    urls = [f"http://node{i}" for i in range(4)]
    for i, url in enumerate(urls):
        key_file = root / f"node{i}.key"
        key = load_or_create_key(key_file)
        service = build_service(
            node_settings(key_file, url, peers=urls[:i]),
            transport=LoopbackTransport(key.node_id, clients),
        )
        clients[url] = TestClient(create_app(service), base_url=url)
        services.append(service)
        keys.append(key)
    with ExitStack() as stack:
        for url in urls:
            stack.enter_context(clients[url])
        yield SimpleNamespace(services=services, clients=[clients[u] for u in urls], keys=keys, urls=urls)


def _block_at(service, height):
    page = service.chain_page(height, 1)
    return page.blocks[0] if page.blocks else None


def test_cluster_agrees_on_one_chain(cluster):
    assert wait_for(lambda: all(_block_at(s, 4) is not None for s in cluster.services))
    assert len({_block_at(s, 4) for s in cluster.services}) == 1
    nodes = cluster.clients[0].get("/node").json()
    assert {p["node_id"] for p in nodes["peers"]} == {k.node_id.hex() for k in cluster.keys[1:]}
    assert all(p["url"] in cluster.urls for p in nodes["peers"])


def test_cluster_places_a_submitted_app(cluster):
    response = cluster.clients[0].post("/apps", json={"app_id": "web", "cpu": 300_000})
    assert response.status_code == 202

    def placed():
        hosts = [s for s in cluster.services if s.runtime.has_app("web")]
        return len(hosts) == 1 and all("web" in s.engine.chain.assignments for s in cluster.services)

    assert wait_for(placed)
    assert cluster.clients[1].post("/apps", json={"app_id": "web", "cpu": 300_000}).status_code == 409


def test_checkpoint_transfer_and_rollback(cluster):
    a, b = cluster.services[:2]
    with a._lock:
        app = AppDescriptor("mig", cpu=100_000)
        a.runtime.start(app)
        assert migrate_app(app, b.node_id, a.node_id, a.runtime, a._send_migration) == MigrationOutcome.MOVED
        assert not a.runtime.has_app("mig")
    assert b.runtime.has_app("mig")

    a.transport.down.add(b.url)
    try:
        with a._lock:
            stuck = AppDescriptor("stuck", cpu=100_000)
            a.runtime.start(stuck)
            outcome = migrate_app(stuck, b.node_id, a.node_id, a.runtime, a._send_migration)
            assert outcome == MigrationOutcome.ROLLED_BACK
            assert a.runtime.has_app("stuck")
    finally:
        a.transport.down.discard(b.url)
    assert not b.runtime.has_app("stuck")


def test_cluster_converges_within_three_periods(cluster):
    periods = 3 * BLOCK_TIME_MS / 1000
    for _ in range(3):
        target = max(s.engine.chain.next_height for s in cluster.services) - 1
        assert wait_for(lambda: all(_block_at(s, target) is not None for s in cluster.services), timeout=periods)
        assert len({_block_at(s, target) for s in cluster.services}) == 1


def _moved_at(service, app_id, start):
    """Height of the first block since start that places or migrates app_id"""
    for block in service.engine.chain.blocks[start:]:
        migration = block.plan.migration
        if any(p.app_id == app_id for p in block.plan.placements) or (migration and migration.app_id == app_id):
            return block.height
    return None


def test_departed_host_apps_restart_within_two_blocks(cluster):
    host = next(i for i, s in enumerate(cluster.services) if s.runtime.has_app("web"))
    leaver, key = cluster.services[host], cluster.keys[host]
    others = [s for s in cluster.services if s is not leaver]
    before = min(s.engine.chain.next_height for s in cluster.services)

    response = cluster.clients[host].request("DELETE", f"/node/{key.node_id.hex()}", json=departure_document(key))
    assert response.status_code == 200
    after = max(s.engine.chain.next_height for s in cluster.services)

    assert wait_for(lambda: not leaver.running)
    assert not leaver.runtime.has_app("web")
    assert wait_for(lambda: sum(s.runtime.has_app("web") for s in others) == 1)
    survivor = others[0]
    assert wait_for(lambda: _moved_at(survivor, "web", before) is not None)
    assert _moved_at(survivor, "web", before) <= after + 1
    assert survivor.engine.chain.assignments["web"].node != key.node_id

    assert wait_for(lambda: all(key.node_id not in s.engine.gossip.pool for s in others))
    height = survivor.engine.chain.next_height + 3
    assert wait_for(lambda: all(_block_at(s, height) is not None for s in others))
    assert len({_block_at(s, height) for s in others}) == 1
    block = decode_block(b64decode(_block_at(survivor, height)))
    assert all(score.node != key.node_id for score in block.scores)
    index = cluster.services.index(survivor)
    assert cluster.clients[index].get("/node").json()["running"] is True


def test_joined_node_appears_in_the_next_block(cluster):
    live = [(s, c) for s, c in zip(cluster.services, cluster.clients) if s.running]
    service, client = live[0]
    before = min(s.engine.chain.next_height for s, _ in live)
    key, document = foreign("late-joiner", age_ms=0)
    assert client.post("/shared", json=document).status_code == 201
    after = max(s.engine.chain.next_height for s, _ in live)

    def snapshot_has_joiner():
        for block in service.engine.chain.blocks[before:]:
            if any(score.node == key.node_id for score in block.scores):
                return block.height
        return None

    assert wait_for(lambda: snapshot_has_joiner() is not None)
    assert snapshot_has_joiner() <= after + 1
