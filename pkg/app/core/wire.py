"""
Peer-to-peer messages: a one-byte kind followed by the body.

Scores, blocks, apps and departure notices travel as their canonical
encodings. A DYNT carries only the 64 signature bytes of the score it
announces; its reply adds a 0/1 byte. A MIGRATE carries the app descriptor
and the checkpoint blob, each prefixed by an 8-byte length.
"""

import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Tuple, Union

from app.core.encoding import (
    canonical_encode,
    decode_app,
    decode_block,
    decode_departure,
    decode_score,
)
from app.core.errors import EncodingError
from app.core.types import SIGNATURE_SIZE, AppDescriptor, Block, Departure, NodeScore

_LENGTH = struct.Struct(">Q")


class MessageKind(IntEnum):
    DYNT = 0x11
    DYNT_REPLY = 0x12
    SCORE = 0x13
    BLOCK = 0x14
    APP = 0x15
    LEAVE = 0x16
    MIGRATE = 0x17


@dataclass(frozen=True)
class DyntReply:
    signature: bytes
    wanted: bool


@dataclass(frozen=True)
class MigrationTransfer:
    app: AppDescriptor
    context: bytes


Body = Union[bytes, DyntReply, NodeScore, Block, AppDescriptor, Departure, MigrationTransfer]


def encode_message(kind: MessageKind, body: Body) -> bytes:
    if kind == MessageKind.DYNT:
        payload = bytes(body)
    elif kind == MessageKind.DYNT_REPLY:
        payload = body.signature + (b"\x01" if body.wanted else b"\x00")
    elif kind == MessageKind.MIGRATE:
        app = canonical_encode(body.app)
        payload = _LENGTH.pack(len(app)) + app + _LENGTH.pack(len(body.context)) + body.context
    else:
        payload = canonical_encode(body)
    return bytes([kind]) + payload


def _decode_migrate(data: bytes) -> MigrationTransfer:
    pos = 1
    parts = []
    for _ in range(2):
        if len(data) - pos < _LENGTH.size:
            raise EncodingError("truncated migrate message", pos)
        (size,) = _LENGTH.unpack_from(data, pos)
        pos += _LENGTH.size
        if size > len(data) - pos:
            raise EncodingError("migrate part runs past the end", pos)
        parts.append(data[pos:pos + size])
        pos += size
    if pos != len(data):
        raise EncodingError(f"{len(data) - pos} trailing bytes", pos)
    return MigrationTransfer(decode_app(parts[0]), parts[1])


_DECODERS = {
    MessageKind.SCORE: decode_score,
    MessageKind.BLOCK: decode_block,
    MessageKind.APP: decode_app,
    MessageKind.LEAVE: decode_departure,
}


def decode_message(data: bytes) -> Tuple[MessageKind, Body]:
    if not data:
        raise EncodingError("empty message", 0)
    try:
        kind = MessageKind(data[0])
    except ValueError:
        raise EncodingError(f"unknown message kind {data[0]:#04x}", 0) from None

    if kind == MessageKind.DYNT:
        if len(data) != 1 + SIGNATURE_SIZE:
            raise EncodingError("DYNT must carry exactly one signature", 1)
        return kind, bytes(data[1:])
    if kind == MessageKind.DYNT_REPLY:
        if len(data) != 2 + SIGNATURE_SIZE or data[-1] not in (0, 1):
            raise EncodingError("malformed DYNT reply", 1)
        return kind, DyntReply(bytes(data[1:-1]), data[-1] == 1)
    if kind == MessageKind.MIGRATE:
        return kind, _decode_migrate(bytes(data))
    return kind, _DECODERS[kind](bytes(data[1:]))
