from typing import Optional


class EdgeLedgerError(Exception):
    """Base class for every error raised by the edge ledger"""


class EncodingError(EdgeLedgerError):
    """Canonical bytes could not be decoded"""

    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)


class MalformedBlockDataError(EdgeLedgerError):
    pass


class PlanApplicationError(EdgeLedgerError):
    """A plan references apps or nodes the block data does not know"""


class NoCandidatesError(EdgeLedgerError):
    """No node has a fresh score, so no leader can be elected"""


class NotLeaderError(EdgeLedgerError):
    pass


class RuntimeUnavailableError(EdgeLedgerError):
    """The container runtime could not be reached"""


class MigrationError(EdgeLedgerError):
    pass


class AuthenticationError(EdgeLedgerError):
    """A signature did not verify"""


class AuthorizationError(EdgeLedgerError):
    """A valid signature from the wrong node"""


class ConflictError(EdgeLedgerError):
    pass


class UnknownNodeError(EdgeLedgerError):
    pass


class ChainFileError(EdgeLedgerError):
    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)


class ConfigError(EdgeLedgerError):
    pass


class SimulationError(EdgeLedgerError):
    """A simulated node rejected a block that every honest node must accept"""
