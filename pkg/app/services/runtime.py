"""
Boundary to the container engine.

The node only needs to list what runs locally and to start, pause, dump,
resume and remove apps; migrating an app is pause, dump, ship the context,
resume it elsewhere. MockRuntime implements that in memory so the daemon and
the simulator run without a container engine.
"""

import json
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Dict, List

from app.core.errors import MigrationError, RuntimeUnavailableError
from app.core.types import AppDescriptor, AppRecord


class RuntimeAdapter(ABC):

    @abstractmethod
    def list_apps(self, now: int) -> List[AppRecord]:
        """Running apps with their current resource fractions"""

    @abstractmethod
    def start(self, app: AppDescriptor) -> None:
        ...

    @abstractmethod
    def pause(self, app_id: str) -> None:
        ...

    @abstractmethod
    def unpause(self, app_id: str) -> None:
        """Let a paused app carry on where it stopped"""

    @abstractmethod
    def dump(self, app_id: str) -> bytes:
        """Checkpoint a paused app into a context blob"""

    @abstractmethod
    def resume(self, app: AppDescriptor, context: bytes) -> None:
        """Restore an app from a context blob produced by dump on any node"""

    @abstractmethod
    def remove(self, app_id: str) -> None:
        ...

    def has_app(self, app_id: str) -> bool:
        return any(record.app_id == app_id for record in self.list_apps(0))


@dataclass
class _MockApp:
    descriptor: AppDescriptor
    context: bytes
    running: bool = True
    resumes: int = 0


class MockRuntime(RuntimeAdapter):
    """In-memory runtime reporting each app at its declared load"""

    def __init__(self):
        self._apps: Dict[str, _MockApp] = {}
        self.available = True

    def _check(self) -> None:
        if not self.available:
            raise RuntimeUnavailableError("mock runtime switched off")

    def _get(self, app_id: str) -> _MockApp:
        self._check()
        entry = self._apps.get(app_id)
        if entry is None:
            raise MigrationError(f"app {app_id} is not on this runtime")
        return entry

    def list_apps(self, now: int) -> List[AppRecord]:
        self._check()
        return [
            AppRecord(app_id, *entry.descriptor.vector(), timestamp=now)
            for app_id, entry in sorted(self._apps.items())
            if entry.running
        ]

    def start(self, app: AppDescriptor) -> None:
        self._check()
        context = json.dumps({"app_id": app.app_id, "resumes": 0}).encode("utf-8")
        self._apps[app.app_id] = _MockApp(app, context)

    def pause(self, app_id: str) -> None:
        self._get(app_id).running = False

    def unpause(self, app_id: str) -> None:
        self._get(app_id).running = True

    def dump(self, app_id: str) -> bytes:
        entry = self._get(app_id)
        if entry.running:
            raise MigrationError(f"app {app_id} must be paused before it is dumped")
        return json.dumps({"app_id": app_id, "resumes": entry.resumes}).encode("utf-8")

    def resume(self, app: AppDescriptor, context: bytes) -> None:
        self._check()
        try:
            state = json.loads(context.decode("utf-8"))
        except (UnicodeDecodeError, ValueError):
            raise MigrationError(f"unreadable context for app {app.app_id}") from None
        if state.get("app_id") != app.app_id:
            raise MigrationError(f"context belongs to {state.get('app_id')}, not {app.app_id}")
        resumes = int(state.get("resumes", 0)) + 1
        self._apps[app.app_id] = _MockApp(app, context, running=True, resumes=resumes)

    def remove(self, app_id: str) -> None:
        self._check()
        self._apps.pop(app_id, None)

    def has_app(self, app_id: str) -> bool:
        entry = self._apps.get(app_id)
        return entry is not None and entry.running

    def app_ids(self) -> List[str]:
        return sorted(a for a, entry in self._apps.items() if entry.running)

    def total_cpu(self) -> int:
        return sum(e.descriptor.cpu for e in self._apps.values() if e.running)
