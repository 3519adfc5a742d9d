import json
from pathlib import Path
from typing import Iterator, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from app.core.errors import ConfigError
from app.core.types import PPM_ONE

PRESETS_DIR = Path(__file__).resolve().parents[2] / "presets"


class LatencyModel(BaseModel):
    """Uniform per-link delay in milliseconds, drawn once per link"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    low_ms: int = Field(5, ge=0)
    high_ms: int = Field(100, ge=0)

    @model_validator(mode="after")
    def check_range(self):
        if self.low_ms > self.high_ms:
            raise ValueError("latency low_ms must not exceed high_ms")
        return self


class SimConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    node_count: int = Field(5, ge=1)
    blocks: int = Field(100, ge=1)
    block_time: int = Field(1000, gt=0)
    app_cpu_range: Tuple[int, int] = (50_000, 400_000)
    app_duration_range: Tuple[int, int] = (10, 60)
    arrival_prob_per_node_per_block: float = Field(0.3, ge=0.0, le=1.0)
    admission_threshold: int = Field(900_000, ge=0)
    latency: LatencyModel = LatencyModel()
    seed: int = Field(1, ge=0, lt=2**64)
    migration_enabled: bool = True

    # "shared": one ledger, instant delivery. "gossip": every node a full engine
    network: Literal["shared", "gossip"] = "shared"
    peer_degree: Optional[int] = Field(None, ge=1)
    crash_leader_at: Optional[Union[int, Literal["random"]]] = None
    # blocks during which only the first node is online, so every admission lands on it
    skew_placement: int = Field(0, ge=0)

    @model_validator(mode="after")
    def check_ranges(self):
        low, high = self.app_cpu_range
        if not 0 < low <= high <= PPM_ONE:
            raise ValueError(f"app_cpu_range must satisfy 0 < low <= high <= {PPM_ONE}")
        low, high = self.app_duration_range
        if not 1 <= low <= high:
            raise ValueError("app_duration_range must satisfy 1 <= low <= high")
        if isinstance(self.crash_leader_at, int) and not 1 <= self.crash_leader_at < self.blocks:
            raise ValueError("crash_leader_at must be a height between 1 and blocks - 1")
        if self.skew_placement and self.network != "shared":
            raise ValueError("skew_placement is only supported by the shared network model")
        if self.peer_degree is not None and self.peer_degree >= self.node_count:
            raise ValueError("peer_degree must be smaller than node_count")
        return self

    def resolve_crash_height(self, rng) -> Optional[int]:
        if self.crash_leader_at == "random":
            return int(rng.integers(2, max(3, self.blocks - 1)))
        return self.crash_leader_at

    def with_overrides(self, **changes) -> "SimConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        return validate_config({**self.model_dump(), **changes})


class SweepSpec(BaseModel):
    """Cartesian sweep over node counts, seeds and arrival probabilities"""

    model_config = ConfigDict(extra="forbid")

    base: SimConfig = SimConfig()
    node_counts: List[int] = Field(default_factory=lambda: [5, 25, 50, 100])
    seeds: List[int] = Field(default_factory=lambda: [1])
    arrival_probs: Optional[List[float]] = None
    baseline: bool = False
    out_dir: str = "results"

    def variations(self) -> Iterator[SimConfig]:
        probs = self.arrival_probs or [self.base.arrival_prob_per_node_per_block]
        for nodes in self.node_counts:
            for prob in probs:
                for seed in self.seeds:
                    config = self.base.with_overrides(
                        node_count=nodes, seed=seed, arrival_prob_per_node_per_block=prob
                    )
                    yield config
                    if self.baseline:
                        yield config.with_overrides(migration_enabled=False)


def config_label(config: SimConfig) -> str:
    label = f"n{config.node_count:03d}-p{config.arrival_prob_per_node_per_block:.2f}-s{config.seed}"
    return label if config.migration_enabled else label + "-baseline"


def validate_config(data: dict) -> SimConfig:
    try:
        return SimConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid simulation config: {exc}") from None


def _read_json(path: Union[str, Path]) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None


def load_config(path: Union[str, Path]) -> SimConfig:
    return validate_config(_read_json(path))


def load_preset(name: str) -> SimConfig:
    path = PRESETS_DIR / f"{name}.json"
    if not path.exists():
        known = ", ".join(sorted(p.stem for p in PRESETS_DIR.glob("*.json")))
        raise ConfigError(f"unknown preset {name!r}, known presets: {known}")
    return load_config(path)


def load_sweep(path: Union[str, Path]) -> SweepSpec:
    try:
        return SweepSpec.model_validate(_read_json(path))
    except ValidationError as exc:
        raise ConfigError(f"invalid sweep spec: {exc}") from None
