import json

import pytest

from app.config import load_or_create_key, load_settings
from app.core.errors import ConfigError
from app.db.database import create_session_factory
from app.services.peer_registry import PeerRegistry


@pytest.fixture(autouse=True)
def clean_env(monkeypatch, tmp_path):
    # keep a developer's .env and NODE_* variables out of the tests
    monkeypatch.chdir(tmp_path)
    for var in ("NODE_PORT", "NODE_PEERS", "NODE_HOST", "BLOCK_TIME_MS", "LOG_LEVEL", "DELTA_ST_MS"):
        monkeypatch.delenv(var, raising=False)


def test_later_sources_win(monkeypatch, tmp_path):
    monkeypatch.setenv("NODE_PORT", "9000")
    monkeypatch.setenv("NODE_PEERS", "http://x:1/, http://y:2")
    assert load_settings().port == 9000

    config = tmp_path / "node.json"
    config.write_text(json.dumps({"port": 9100, "block_time_ms": 500}))
    settings = load_settings(config)
    assert settings.port == 9100
    assert settings.peers == ["http://x:1", "http://y:2"]
    assert load_settings(config, port=9200, host=None).port == 9200


def test_node_config_follows_block_time(monkeypatch):
    monkeypatch.setenv("BLOCK_TIME_MS", "400")
    settings = load_settings()
    config = settings.node_config()
    assert config.block_time == 400
    assert config.gossip_config.delta_st == 200
    assert config.genesis_wait == 800
    assert settings.url == "http://127.0.0.1:8000"

    monkeypatch.setenv("DELTA_ST_MS", "50")
    assert load_settings(advertise_url="http://edge-1:80/").node_config().gossip_config.delta_st == 50
    assert load_settings(advertise_url="http://edge-1:80/").url == "http://edge-1:80"


def test_invalid_settings(monkeypatch, tmp_path):
    monkeypatch.setenv("LOG_LEVEL", "chatty")
    with pytest.raises(ConfigError):
        load_settings()
    monkeypatch.delenv("LOG_LEVEL")
    with pytest.raises(ConfigError):
        load_settings(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{port:")
    with pytest.raises(ConfigError):
        load_settings(broken)
    with pytest.raises(ConfigError):
        load_settings(block_time_ms=0)


def test_key_is_created_once(tmp_path):
    path = tmp_path / "keys" / "node.key"
    first = load_or_create_key(path)
    assert path.exists()
    assert load_or_create_key(path).node_id == first.node_id
    path.write_bytes(b"garbage")
    with pytest.raises(ConfigError):
        load_or_create_key(path)


def test_peer_registry_persists(tmp_path, make_key):
    url = f"sqlite:///{tmp_path / 'peers.db'}"
    registry = PeerRegistry(create_session_factory(url))
    a, b = make_key("reg-a").node_id, make_key("reg-b").node_id
    registry.register(a, "http://a:1/")
    registry.register(b, "http://b:1")
    assert registry.url_of(a) == "http://a:1"
    assert a in registry
    assert registry.connection_stats() == (None, None)

    registry.record_connection(a, 10.0)
    registry.record_connection(b, 30.0)
    last, average = registry.connection_stats()
    assert last is not None
    assert average == pytest.approx(20.0)

    reopened = PeerRegistry(create_session_factory(url))
    assert reopened.node_ids() == sorted([a, b])
    assert reopened.get(a).connection_count == 1

    assert registry.remove(b)
    assert not registry.remove(b)
    assert registry.node_ids() == [a]
    assert PeerRegistry(create_session_factory(url)).node_ids() == [a]
