from enum import Enum
from typing import Callable

from app.core.errors import EdgeLedgerError
from app.core.types import AppDescriptor, NodeId
from app.core.wire import MigrationTransfer
from app.services.runtime import RuntimeAdapter
from app.utils.logger import setup_logging

logger = setup_logging("edge.migration")

# delivers a checkpoint to a peer; True once the peer has resumed the app
Sender = Callable[[NodeId, MigrationTransfer], bool]


class MigrationOutcome(str, Enum):
    NOOP = "noop"
    MOVED = "moved"
    ROLLED_BACK = "rolled-back"


def migrate_app(app: AppDescriptor, target: NodeId, local: NodeId, runtime: RuntimeAdapter, send: Sender) -> MigrationOutcome:
    """
    Pause, dump, ship the context to target and remove the local copy.

    If the transfer fails the app is resumed here from its own context and
    the next score shows it still running locally.
    """
    if target == local:
        return MigrationOutcome.NOOP

    runtime.pause(app.app_id)
    try:
        context = runtime.dump(app.app_id)
    except EdgeLedgerError:
        runtime.unpause(app.app_id)
        logger.warning(f"↩️ could not checkpoint {app.app_id}, it keeps running on {local}")
        raise
    try:
        delivered = send(target, MigrationTransfer(app, context))
    except EdgeLedgerError as exc:
        logger.warning(f"⚠️ transfer of {app.app_id} to {target} failed: {exc}")
        delivered = False

    if delivered:
        runtime.remove(app.app_id)
        logger.info(f"🚚 migrated {app.app_id} to {target}")
        return MigrationOutcome.MOVED

    runtime.resume(app, context)
    logger.warning(f"↩️ {app.app_id} stays on {local}, {target} did not take it")
    return MigrationOutcome.ROLLED_BACK


def accept_migration(transfer: MigrationTransfer, runtime: RuntimeAdapter) -> bool:
    try:
        runtime.resume(transfer.app, transfer.context)
    except EdgeLedgerError as exc:
        logger.error(f"❌ could not resume {transfer.app.app_id}: {exc}")
        return False
    return True
