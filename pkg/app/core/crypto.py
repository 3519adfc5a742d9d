"""
Node identities and signatures.

A node is identified by its raw Ed25519 public key, so holding the private key
is what it means to be that node. Ed25519 signatures are deterministic and 64
bytes long.
"""

import functools
import hashlib
from pathlib import Path
from typing import Union

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from app.core.types import NodeId, Signature


class NodeKey:
    """A node's private signing key"""

    def __init__(self, private_key: Ed25519PrivateKey):
        self._key = private_key
        raw = private_key.public_key().public_bytes(
            encoding=serialization.Encoding.Raw,
            format=serialization.PublicFormat.Raw,
        )
        self.node_id = NodeId(raw)

    @classmethod
    def generate(cls) -> "NodeKey":
        return cls(Ed25519PrivateKey.generate())

    @classmethod
    def from_seed(cls, seed: Union[bytes, str, int]) -> "NodeKey":
        """Derive a key deterministically, for simulations and tests"""
        if isinstance(seed, int):
            seed = seed.to_bytes(8, "big")
        elif isinstance(seed, str):
            seed = seed.encode("utf-8")
        digest = hashlib.sha256(b"edge-ledger-key:" + seed).digest()
        return cls(Ed25519PrivateKey.from_private_bytes(digest))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "NodeKey":
        data = Path(path).read_bytes()
        key = serialization.load_pem_private_key(data, password=None)
        if not isinstance(key, Ed25519PrivateKey):
            raise ValueError(f"{path} does not hold an Ed25519 private key")
        return cls(key)

    def save(self, path: Union[str, Path]) -> None:
        pem = self._key.private_bytes(
            encoding=serialization.Encoding.PEM,
            format=serialization.PrivateFormat.PKCS8,
            encryption_algorithm=serialization.NoEncryption(),
        )
        Path(path).write_bytes(pem)

    def sign(self, message: bytes) -> Signature:
        return Signature(self._key.sign(message), self.node_id)


def sign(key: NodeKey, message: bytes) -> Signature:
    return key.sign(message)


@functools.lru_cache(maxsize=65536)
def _verify_raw(public: bytes, message: bytes, signature: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public).verify(signature, message)
        return True
    except (InvalidSignature, ValueError):
        return False


def verify(sig: Signature, message: bytes) -> bool:
    """True iff sig is sig.signer's signature over message; never raises"""
    try:
        return _verify_raw(sig.signer.value, bytes(message), bytes(sig.value))
    except Exception:
        return False
