"""
Append-only chain file.

Layout: an 8-byte magic, then version, block time, the four resource weights
and a flags word (bit 0: rebalancing migrations enabled) as 8-byte big-endian
integers, then one record per block: an 8-byte length followed by the
canonical block encoding.
"""

import os
import struct
from pathlib import Path
from typing import List, Tuple, Union

from app.core.encoding import canonical_encode, decode_block
from app.core.errors import ChainFileError, EncodingError
from app.core.types import Block
from app.services.consensus import ChainParams
from app.services.planner import ResourceWeights
from app.utils.logger import setup_logging

logger = setup_logging("edge.chain")

MAGIC = b"EDGECHN\x00"
VERSION = 1
_HEADER = struct.Struct(">8sQQQQQQQ")
FLAG_MIGRATIONS = 0x1
_LENGTH = struct.Struct(">Q")


def encode_header(params: ChainParams) -> bytes:
    flags = FLAG_MIGRATIONS if params.migrations else 0
    return _HEADER.pack(MAGIC, VERSION, params.block_time, *params.weights.as_tuple(), flags)


def decode_header(data: bytes) -> ChainParams:
    if not data:
        raise ChainFileError("empty chain file", 0)
    if len(data) < _HEADER.size:
        raise ChainFileError("truncated header", len(data))
    magic, version, block_time, *weights, flags = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ChainFileError("not a chain file", 0)
    if version != VERSION:
        raise ChainFileError(f"unsupported chain file version {version}", 8)
    if flags & ~FLAG_MIGRATIONS:
        raise ChainFileError(f"unknown header flags {flags:#x}", 56)
    try:
        return ChainParams(
            block_time=block_time,
            weights=ResourceWeights(*weights),
            migrations=bool(flags & FLAG_MIGRATIONS),
        )
    except ValueError as exc:
        raise ChainFileError(str(exc), 24) from None


def parse_chain(data: bytes) -> Tuple[ChainParams, List[Block]]:
    """
    Split a chain file into its parameters and blocks.

    Raises:
        ChainFileError: with the byte offset of the first bad record
    """
    params = decode_header(data)
    blocks = []
    pos = _HEADER.size
    while pos < len(data):
        if len(data) - pos < _LENGTH.size:
            raise ChainFileError(f"truncated length of block {len(blocks)}", pos)
        (size,) = _LENGTH.unpack_from(data, pos)
        start = pos + _LENGTH.size
        if size > len(data) - start:
            raise ChainFileError(f"block {len(blocks)} runs past the end of the file", pos)
        try:
            blocks.append(decode_block(data[start:start + size]))
        except EncodingError as exc:
            inner = exc.offset if exc.offset is not None else 0
            raise ChainFileError(f"block {len(blocks)} does not decode: {exc}", start + inner) from None
        pos = start + size
    return params, blocks


def serialize_chain(params: ChainParams, blocks: List[Block]) -> bytes:
    parts = [encode_header(params)]
    for block in blocks:
        raw = canonical_encode(block)
        parts.append(_LENGTH.pack(len(raw)) + raw)
    return b"".join(parts)


class ChainStore:
    """A chain file opened for appending"""

    def __init__(self, path: Union[str, Path], params: ChainParams):
        self.path = Path(path)
        self.params = params
        if not self.path.exists() or self.path.stat().st_size == 0:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_bytes(encode_header(params))

    def load(self) -> List[Block]:
        params, blocks = parse_chain(self.path.read_bytes())
        if params != self.params:
            raise ChainFileError(f"{self.path} was written with different chain parameters", 8)
        logger.debug(f"loaded {len(blocks)} blocks from {self.path}")
        return blocks

    def append(self, block: Block) -> None:
        raw = canonical_encode(block)
        with open(self.path, "ab") as fh:
            fh.write(_LENGTH.pack(len(raw)) + raw)
            fh.flush()
            os.fsync(fh.fileno())


def read_chain(path: Union[str, Path]) -> Tuple[ChainParams, List[Block]]:
    return parse_chain(Path(path).read_bytes())


def write_chain(path: Union[str, Path], params: ChainParams, blocks: List[Block]) -> None:
    Path(path).write_bytes(serialize_chain(params, blocks))
