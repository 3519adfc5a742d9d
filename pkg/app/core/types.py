"""
Value types shared by every part of the ledger.

All of them are frozen dataclasses: scores, plans and blocks are compared,
hashed and signed by their canonical encoding, so they must never change after
construction. Resource loads are integer parts-per-million of one node's
capacity; no float reaches a signed or hashed payload.
"""

from dataclasses import dataclass
from typing import NewType, Optional, Tuple

PPM_ONE = 1_000_000
PPM_MAX = 10_000_000
RESOURCES = ("cpu", "ram", "disk", "network")

NODE_ID_SIZE = 32
HASH_SIZE = 32
SIGNATURE_SIZE = 64

ResourceFraction = NewType("ResourceFraction", int)


def check_fraction(ppm: int) -> ResourceFraction:
    if isinstance(ppm, bool) or not isinstance(ppm, int):
        raise ValueError(f"resource fraction must be an integer ppm, got {ppm!r}")
    if ppm < 0 or ppm > PPM_MAX:
        raise ValueError(f"resource fraction {ppm} outside [0, {PPM_MAX}]")
    return ResourceFraction(ppm)


def fraction(value: float) -> ResourceFraction:
    """Convert a fraction such as 0.30 into ppm (300_000)"""
    return check_fraction(int(round(value * PPM_ONE)))


@dataclass(frozen=True, order=True)
class NodeId:
    value: bytes

    def __post_init__(self):
        if len(self.value) != NODE_ID_SIZE:
            raise ValueError(f"node id must be {NODE_ID_SIZE} bytes, got {len(self.value)}")

    @classmethod
    def from_hex(cls, text: str) -> "NodeId":
        return cls(bytes.fromhex(text))

    def hex(self) -> str:
        return self.value.hex()

    def short(self) -> str:
        return self.value.hex()[:8]

    def __str__(self) -> str:
        return self.short()


@dataclass(frozen=True)
class Hash:
    value: bytes

    def __post_init__(self):
        if len(self.value) != HASH_SIZE:
            raise ValueError(f"hash must be {HASH_SIZE} bytes, got {len(self.value)}")

    @classmethod
    def zero(cls) -> "Hash":
        return cls(bytes(HASH_SIZE))

    def hex(self) -> str:
        return self.value.hex()

    def __str__(self) -> str:
        return self.value.hex()[:12]


@dataclass(frozen=True)
class Signature:
    value: bytes
    signer: NodeId

    def __post_init__(self):
        if len(self.value) != SIGNATURE_SIZE:
            raise ValueError(f"signature must be {SIGNATURE_SIZE} bytes, got {len(self.value)}")


def _check_vector(owner: str, cpu: int, ram: int, disk: int, network: int) -> None:
    for name, ppm in zip(RESOURCES, (cpu, ram, disk, network)):
        try:
            check_fraction(ppm)
        except ValueError as exc:
            raise ValueError(f"{owner}.{name}: {exc}") from None


@dataclass(frozen=True)
class AppRecord:
    """One row of a node's state matrix: an app and what it consumes"""

    app_id: str
    cpu: int
    ram: int
    disk: int
    network: int
    timestamp: int

    def __post_init__(self):
        _check_vector(self.app_id, self.cpu, self.ram, self.disk, self.network)

    def vector(self) -> Tuple[int, int, int, int]:
        return (self.cpu, self.ram, self.disk, self.network)


@dataclass(frozen=True)
class AppDescriptor:
    """An app as submitted for placement, with its declared load"""

    app_id: str
    cpu: int
    ram: int = 0
    disk: int = 0
    network: int = 0

    def __post_init__(self):
        if not self.app_id:
            raise ValueError("app_id must not be empty")
        _check_vector(self.app_id, self.cpu, self.ram, self.disk, self.network)

    def vector(self) -> Tuple[int, int, int, int]:
        return (self.cpu, self.ram, self.disk, self.network)


@dataclass(frozen=True)
class NodeScore:
    node: NodeId
    apps: Tuple[AppRecord, ...]
    collected_at: int
    signature: Signature
    stale: bool = False

    def __post_init__(self):
        ids = [app.app_id for app in self.apps]
        if any(a >= b for a, b in zip(ids, ids[1:])):
            raise ValueError("score apps must be sorted by app_id without duplicates")

    @property
    def app_ids(self) -> Tuple[str, ...]:
        return tuple(app.app_id for app in self.apps)

    def find(self, app_id: str) -> Optional[AppRecord]:
        for app in self.apps:
            if app.app_id == app_id:
                return app
        return None


@dataclass(frozen=True)
class Assignment:
    """Where the ledger places an app, and the block timestamp that put it there"""

    node: NodeId
    since: int


@dataclass(frozen=True)
class Placement:
    app_id: str
    node: NodeId


@dataclass(frozen=True)
class Migration:
    app_id: str
    source: NodeId
    target: NodeId


@dataclass(frozen=True)
class MigrationPlan:
    placements: Tuple[Placement, ...] = ()
    migration: Optional[Migration] = None
    retirements: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.placements and self.migration is not None:
            raise ValueError("a plan carries placements or a migration, never both")

    @property
    def is_empty(self) -> bool:
        return not self.placements and self.migration is None and not self.retirements

    def touches(self, node: NodeId) -> bool:
        if any(p.node == node for p in self.placements):
            return True
        m = self.migration
        return m is not None and node in (m.source, m.target)


EMPTY_PLAN = MigrationPlan()


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: Hash
    retry: int
    leader: NodeId
    plan: MigrationPlan
    scores: Tuple[NodeScore, ...]
    queue_snapshot: Tuple[AppDescriptor, ...]
    timestamp: int
    leader_signature: Signature

    def __post_init__(self):
        if self.height < 0 or self.retry < 0:
            raise ValueError("height and retry must be non-negative")
        nodes = [s.node for s in self.scores]
        if any(a >= b for a, b in zip(nodes, nodes[1:])):
            raise ValueError("block scores must be sorted by node id without duplicates")


@dataclass(frozen=True)
class Departure:
    """A node's signed notice that it leaves the network"""

    node: NodeId
    departed_at: int
    signature: Signature
