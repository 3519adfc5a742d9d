import heapq
import itertools
from dataclasses import dataclass, field
from typing import Any, List, Optional


@dataclass(order=True)
class Event:
    time: int
    seq: int
    kind: str = field(compare=False)
    node: int = field(compare=False)
    data: Any = field(default=None, compare=False)


class EventQueue:
    """Virtual-time queue, popped in (time, insertion order) order"""

    def __init__(self):
        self._heap: List[Event] = []
        self._seq = itertools.count()
        self.now = 0

    def push(self, time: int, kind: str, node: int, data: Any = None) -> Event:
        if time < self.now:
            raise ValueError(f"cannot schedule {kind} at {time}, it is already {self.now}")
        event = Event(time, next(self._seq), kind, node, data)
        heapq.heappush(self._heap, event)
        return event

    def pop(self) -> Optional[Event]:
        if not self._heap:
            return None
        event = heapq.heappop(self._heap)
        self.now = event.time
        return event

    def peek_time(self) -> Optional[int]:
        return self._heap[0].time if self._heap else None

    def __len__(self) -> int:
        return len(self._heap)
