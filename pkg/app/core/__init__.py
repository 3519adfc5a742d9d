from app.core.crypto import NodeKey, sign, verify
from app.core.encoding import block_hash, canonical_encode, decode, hash_bytes
from app.core.types import (
    PPM_MAX,
    PPM_ONE,
    AppDescriptor,
    AppRecord,
    Assignment,
    Block,
    Departure,
    Hash,
    Migration,
    MigrationPlan,
    NodeId,
    NodeScore,
    Placement,
    Signature,
    fraction,
)
