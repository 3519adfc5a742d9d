"""
Entry points of the simulator: build the configured network model, run it
and pair it with its no-migration baseline.
"""

import os
from typing import Optional, Union

from app.services.planner import MigrationPlanner
from app.sim.apps import SimApp, sample_arrivals
from app.sim.config import SimConfig
from app.sim.metrics import MetricsSeries, crossover_block
from app.sim.network import GossipNetworkSimulation
from app.sim.shared import SharedLedgerSimulation
from app.utils.logger import set_level

Simulation = Union[SharedLedgerSimulation, GossipNetworkSimulation]

__all__ = [
    "SimApp",
    "Simulation",
    "baseline_run",
    "build_simulation",
    "crossover_block",
    "run",
    "sample_arrivals",
]


def build_simulation(config: SimConfig, planner: Optional[MigrationPlanner] = None) -> Simulation:
    """Simulations log at SIM_LOG_LEVEL, WARNING unless set"""
    set_level(os.getenv("SIM_LOG_LEVEL", "WARNING"))
    if config.network == "gossip":
        return GossipNetworkSimulation(config, planner)
    return SharedLedgerSimulation(config, planner)


def run(config: SimConfig) -> MetricsSeries:
    return build_simulation(config).run()


def baseline_run(config: SimConfig) -> MetricsSeries:
    """Same seed and arrivals, queue placement only"""
    return run(config.with_overrides(migration_enabled=False))
