"""
Canonical byte encoding for scores, plans, blocks and departure notices.

Every top-level value starts with a one-byte type tag. Inside a value fields
appear in a fixed order; integers are 8-byte big-endian unsigned, lists and
strings are prefixed by their 8-byte length, strings are UTF-8, node ids and
hashes are 32 raw bytes and a signature is its signer's node id followed by
the 64 signature bytes. Booleans are integers restricted to 0 or 1. There is
no floating point anywhere. The byte layout is tabulated in
docs/wire_format.md.

Decoding is strict: trailing bytes, impossible lengths, out-of-range
fractions, unsorted lists and non 0/1 booleans are rejected, so the encoding
is a bijection between valid values and accepted byte strings.
"""

import hashlib
import struct
from typing import Callable, List, Optional, TypeVar, Union

from app.core.errors import EncodingError
from app.core.types import (
    HASH_SIZE,
    NODE_ID_SIZE,
    SIGNATURE_SIZE,
    AppDescriptor,
    AppRecord,
    Block,
    Departure,
    Hash,
    Migration,
    MigrationPlan,
    NodeId,
    NodeScore,
    Placement,
    Signature,
)

TAG_SCORE = 0x01
TAG_PLAN = 0x02
TAG_BLOCK = 0x03
TAG_DEPARTURE = 0x04
TAG_APP = 0x05

_U64 = struct.Struct(">Q")
_U64_MAX = (1 << 64) - 1

T = TypeVar("T")


class _Writer:
    def __init__(self, tag: Optional[int] = None):
        self.buf = bytearray()
        if tag is not None:
            self.buf.append(tag)

    def u64(self, value: int) -> None:
        if value < 0 or value > _U64_MAX:
            raise ValueError(f"integer {value} does not fit in 8 unsigned bytes")
        self.buf += _U64.pack(value)

    def flag(self, value: bool) -> None:
        self.u64(1 if value else 0)

    def text(self, value: str) -> None:
        raw = value.encode("utf-8")
        self.u64(len(raw))
        self.buf += raw

    def raw(self, value: bytes) -> None:
        self.buf += value

    def signature(self, sig: Signature) -> None:
        self.buf += sig.signer.value
        self.buf += sig.value

    def getvalue(self) -> bytes:
        return bytes(self.buf)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def remaining(self) -> int:
        return len(self.data) - self.pos

    def raw(self, size: int) -> bytes:
        if self.remaining() < size:
            raise EncodingError(f"truncated input, needed {size} bytes", self.pos)
        chunk = self.data[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def u64(self) -> int:
        return _U64.unpack(self.raw(8))[0]

    def flag(self) -> bool:
        at = self.pos
        value = self.u64()
        if value not in (0, 1):
            raise EncodingError(f"boolean must be 0 or 1, got {value}", at)
        return value == 1

    def length(self, min_item_size: int) -> int:
        at = self.pos
        count = self.u64()
        if count * min_item_size > self.remaining():
            raise EncodingError(f"length {count} exceeds remaining input", at)
        return count

    def text(self) -> str:
        size = self.length(1)
        at = self.pos
        try:
            return self.raw(size).decode("utf-8")
        except UnicodeDecodeError:
            raise EncodingError("invalid UTF-8 string", at) from None

    def node_id(self) -> NodeId:
        return NodeId(self.raw(NODE_ID_SIZE))

    def hash(self) -> Hash:
        return Hash(self.raw(HASH_SIZE))

    def signature(self) -> Signature:
        signer = self.node_id()
        return Signature(self.raw(SIGNATURE_SIZE), signer)

    def items(self, min_item_size: int, read: Callable[["_Reader"], T]) -> List[T]:
        return [read(self) for _ in range(self.length(min_item_size))]

    def tag(self, expected: int) -> None:
        got = self.raw(1)[0]
        if got != expected:
            raise EncodingError(f"unexpected type tag {got:#04x}, wanted {expected:#04x}", 0)

    def finish(self) -> None:
        if self.remaining():
            raise EncodingError(f"{self.remaining()} trailing bytes", self.pos)


def _build(reader: _Reader, factory: Callable[..., T], *args, **kwargs) -> T:
    at = reader.pos
    try:
        return factory(*args, **kwargs)
    except ValueError as exc:
        raise EncodingError(str(exc), at) from None


# --- apps -----------------------------------------------------------------

def _write_record(w: _Writer, app: AppRecord) -> None:
    w.text(app.app_id)
    for ppm in app.vector():
        w.u64(ppm)
    w.u64(app.timestamp)


def _read_record(r: _Reader) -> AppRecord:
    app_id = r.text()
    cpu, ram, disk, network, ts = (r.u64() for _ in range(5))
    return _build(r, AppRecord, app_id, cpu, ram, disk, network, ts)


def _write_descriptor(w: _Writer, app: AppDescriptor) -> None:
    w.text(app.app_id)
    for ppm in app.vector():
        w.u64(ppm)


def _read_descriptor(r: _Reader) -> AppDescriptor:
    app_id = r.text()
    cpu, ram, disk, network = (r.u64() for _ in range(4))
    return _build(r, AppDescriptor, app_id, cpu, ram, disk, network)


# --- scores -----------------------------------------------------------------

def _write_score_fields(w: _Writer, node: NodeId, apps, collected_at: int, stale: bool) -> None:
    w.raw(node.value)
    w.u64(collected_at)
    w.flag(stale)
    w.u64(len(apps))
    for app in apps:
        _write_record(w, app)


def score_signing_payload(node: NodeId, apps, collected_at: int, stale: bool) -> bytes:
    """Bytes a node signs when it publishes its score"""
    w = _Writer(TAG_SCORE)
    _write_score_fields(w, node, apps, collected_at, stale)
    return w.getvalue()


def _write_score(w: _Writer, score: NodeScore) -> None:
    _write_score_fields(w, score.node, score.apps, score.collected_at, score.stale)
    w.signature(score.signature)


def _read_score(r: _Reader) -> NodeScore:
    node = r.node_id()
    collected_at = r.u64()
    stale = r.flag()
    apps = tuple(r.items(8 * 6, _read_record))
    sig = r.signature()
    return _build(r, NodeScore, node, apps, collected_at, sig, stale)


# --- plans ------------------------------------------------------------------

def _write_plan(w: _Writer, plan: MigrationPlan) -> None:
    w.u64(len(plan.placements))
    for p in plan.placements:
        w.text(p.app_id)
        w.raw(p.node.value)
    w.flag(plan.migration is not None)
    if plan.migration is not None:
        w.text(plan.migration.app_id)
        w.raw(plan.migration.source.value)
        w.raw(plan.migration.target.value)
    w.u64(len(plan.retirements))
    for app_id in plan.retirements:
        w.text(app_id)


def _read_placement(r: _Reader) -> Placement:
    app_id = r.text()
    return Placement(app_id, r.node_id())


def _read_plan(r: _Reader) -> MigrationPlan:
    placements = tuple(r.items(8 + NODE_ID_SIZE, _read_placement))
    migration = None
    if r.flag():
        app_id = r.text()
        migration = Migration(app_id, r.node_id(), r.node_id())
    retirements = tuple(r.items(8, lambda rr: rr.text()))
    return _build(r, MigrationPlan, placements, migration, retirements)


# --- blocks -----------------------------------------------------------------

def _write_block_fields(w: _Writer, block: Block) -> None:
    w.u64(block.height)
    w.raw(block.prev_hash.value)
    w.u64(block.retry)
    w.raw(block.leader.value)
    _write_plan(w, block.plan)
    w.u64(len(block.scores))
    for score in block.scores:
        _write_score(w, score)
    w.u64(len(block.queue_snapshot))
    for app in block.queue_snapshot:
        _write_descriptor(w, app)
    w.u64(block.timestamp)


def block_signing_payload(block: Block) -> bytes:
    """Every block field except the leader signature, as signed by the leader"""
    w = _Writer(TAG_BLOCK)
    _write_block_fields(w, block)
    return w.getvalue()


def _read_block(r: _Reader) -> Block:
    height = r.u64()
    prev_hash = r.hash()
    retry = r.u64()
    leader = r.node_id()
    plan = _read_plan(r)
    scores = tuple(r.items(NODE_ID_SIZE + 8 * 3, _read_score))
    queue = tuple(r.items(8 * 5, _read_descriptor))
    timestamp = r.u64()
    sig = r.signature()
    return _build(r, Block, height, prev_hash, retry, leader, plan, scores, queue, timestamp, sig)


# --- departures ---------------------------------------------------------------

def departure_signing_payload(node: NodeId, departed_at: int) -> bytes:
    w = _Writer(TAG_DEPARTURE)
    w.raw(node.value)
    w.u64(departed_at)
    return w.getvalue()


def _read_departure(r: _Reader) -> Departure:
    node = r.node_id()
    departed_at = r.u64()
    return Departure(node, departed_at, r.signature())


# --- public API ---------------------------------------------------------------

Encodable = Union[NodeScore, MigrationPlan, Block, Departure, AppDescriptor]


def canonical_encode(value: Encodable) -> bytes:
    if isinstance(value, NodeScore):
        w = _Writer(TAG_SCORE)
        _write_score(w, value)
    elif isinstance(value, Block):
        w = _Writer(TAG_BLOCK)
        _write_block_fields(w, value)
        w.signature(value.leader_signature)
    elif isinstance(value, MigrationPlan):
        w = _Writer(TAG_PLAN)
        _write_plan(w, value)
    elif isinstance(value, Departure):
        w = _Writer(TAG_DEPARTURE)
        w.raw(value.node.value)
        w.u64(value.departed_at)
        w.signature(value.signature)
    elif isinstance(value, AppDescriptor):
        w = _Writer(TAG_APP)
        _write_descriptor(w, value)
    else:
        raise TypeError(f"cannot encode {type(value).__name__}")
    return w.getvalue()


_DECODERS = {
    TAG_SCORE: _read_score,
    TAG_PLAN: _read_plan,
    TAG_BLOCK: _read_block,
    TAG_DEPARTURE: _read_departure,
    TAG_APP: _read_descriptor,
}


def _decode(data: bytes, tag: int):
    r = _Reader(bytes(data))
    r.tag(tag)
    value = _DECODERS[tag](r)
    r.finish()
    return value


def decode_score(data: bytes) -> NodeScore:
    return _decode(data, TAG_SCORE)


def decode_plan(data: bytes) -> MigrationPlan:
    return _decode(data, TAG_PLAN)


def decode_block(data: bytes) -> Block:
    return _decode(data, TAG_BLOCK)


def decode_departure(data: bytes) -> Departure:
    return _decode(data, TAG_DEPARTURE)


def decode_app(data: bytes) -> AppDescriptor:
    return _decode(data, TAG_APP)


def decode(data: bytes) -> Encodable:
    """Decode any top-level value, dispatching on its type tag"""
    if not data:
        raise EncodingError("empty input", 0)
    tag = data[0]
    if tag not in _DECODERS:
        raise EncodingError(f"unknown type tag {tag:#04x}", 0)
    return _decode(data, tag)


def hash_bytes(data: bytes) -> Hash:
    return Hash(hashlib.sha256(data).digest())


def block_hash(block: Block) -> Hash:
    return hash_bytes(canonical_encode(block))

