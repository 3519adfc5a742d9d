from types import SimpleNamespace
from typing import Dict, Iterable, Tuple

import pytest

from app.core.crypto import NodeKey
from app.core.types import AppRecord, Assignment, NodeScore, fraction
from app.services.gossip import sign_score
from app.services.planner import BlockData

# app, node, cpu, ram, disk
EXAMPLE_ROWS = (
    ("v0", "A", 0.90, 0.50, 0.23),
    ("v1", "B", 0.23, 0.47, 0.87),
    ("v2", "C", 0.15, 0.12, 0.25),
    ("v3", "A", 0.56, 0.35, 0.14),
    ("v4", "D", 0.16, 0.25, 0.74),
)


def node_key(name: str) -> NodeKey:
    return NodeKey.from_seed(f"test-{name}")


def record(app_id: str, cpu: float, ram: float = 0.0, disk: float = 0.0, at: int = 0) -> AppRecord:
    return AppRecord(app_id, fraction(cpu), fraction(ram), fraction(disk), 0, at)


def signed_score(key: NodeKey, at: int, apps: Iterable[Tuple[str, float]] = ()) -> NodeScore:
    return sign_score(key, [record(app_id, cpu, at=at) for app_id, cpu in apps], at)


@pytest.fixture
def make_key():
    return node_key


@pytest.fixture
def make_score():
    return signed_score


@pytest.fixture
def example_ledger():
    """The four-node example block: A runs v0 and v3, B v1, C v2, D v4"""
    keys: Dict[str, NodeKey] = {name: node_key(name) for name in "ABCD"}
    at = 500
    rows: Dict[str, list] = {name: [] for name in keys}
    for app_id, node, cpu, ram, disk in EXAMPLE_ROWS:
        rows[node].append(record(app_id, cpu, ram, disk, at=at))
    scores = sorted(
        (sign_score(keys[name], rows[name], at) for name in keys),
        key=lambda s: s.node,
    )
    assignments = {app_id: Assignment(keys[node].node_id, 0) for app_id, node, *_ in EXAMPLE_ROWS}
    ids = {name: key.node_id for name, key in keys.items()}
    return SimpleNamespace(
        keys=keys,
        ids=ids,
        scores=tuple(scores),
        assignments=assignments,
        data=BlockData(scores=tuple(scores), assignments=assignments),
        at=at,
    )
