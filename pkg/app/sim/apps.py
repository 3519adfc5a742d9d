from dataclasses import dataclass
from enum import Enum
from typing import List, Optional

import numpy as np

from app.core.types import AppDescriptor
from app.sim.config import SimConfig


class AppState(str, Enum):
    QUEUED = "queued"
    RUNNING = "running"
    MIGRATING = "migrating"
    DONE = "done"


@dataclass
class SimApp:
    app_id: str
    cpu: int
    remaining_blocks: int
    arrival_node: int = 0
    state: AppState = AppState.QUEUED
    node: Optional[int] = None

    @property
    def descriptor(self) -> AppDescriptor:
        return AppDescriptor(self.app_id, cpu=self.cpu)

    def tick(self) -> bool:
        """Count one block of execution; True once the app has finished"""
        if self.state != AppState.RUNNING:
            return False
        self.remaining_blocks -= 1
        if self.remaining_blocks <= 0:
            self.state = AppState.DONE
            return True
        return False


def sample_arrivals(rng: np.random.Generator, config: SimConfig, block_height: int) -> List[SimApp]:
    """One Bernoulli draw per node, then cpu and duration for each arrival, all from rng"""
    hits = rng.random(config.node_count) < config.arrival_prob_per_node_per_block
    nodes = np.flatnonzero(hits)
    cpu_low, cpu_high = config.app_cpu_range
    dur_low, dur_high = config.app_duration_range
    cpus = rng.integers(cpu_low, cpu_high, size=nodes.size, endpoint=True)
    durations = rng.integers(dur_low, dur_high, size=nodes.size, endpoint=True)
    return [
        SimApp(f"app-{block_height:05d}-{int(node):03d}", int(cpu), int(duration), arrival_node=int(node))
        for node, cpu, duration in zip(nodes, cpus, durations)
    ]
