"""
Node daemon settings.

Values come from environment variables (a .env file is loaded first), then
from an optional JSON config file, then from explicit overrides such as CLI
flags. Later sources win.
"""

import json
import os
from pathlib import Path
from typing import Dict, List, Optional, Union

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from app.core.crypto import NodeKey
from app.core.errors import ConfigError
from app.services.gossip import GossipConfig
from app.services.node_engine import NodeConfig
from app.utils.logger import setup_logging

logger = setup_logging("edge.config")

ENV_VARS: Dict[str, str] = {
    "key_file": "NODE_KEY_FILE",
    "host": "NODE_HOST",
    "port": "NODE_PORT",
    "peers": "NODE_PEERS",
    "advertise_url": "NODE_ADVERTISE_URL",
    "delta_st_ms": "DELTA_ST_MS",
    "collect_interval_ms": "COLLECT_INTERVAL_MS",
    "block_time_ms": "BLOCK_TIME_MS",
    "genesis_delay_ms": "GENESIS_DELAY_MS",
    "admission_threshold_ppm": "ADMISSION_THRESHOLD_PPM",
    "chain_file": "CHAIN_FILE",
    "database_url": "DATABASE_URL",
    "log_level": "LOG_LEVEL",
}


class NodeSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    key_file: Path = Path("node.key")
    host: str = "127.0.0.1"
    port: int = Field(8000, ge=0, le=65535)
    peers: List[str] = Field(default_factory=list)
    advertise_url: Optional[str] = None
    delta_st_ms: Optional[int] = Field(None, gt=0)
    collect_interval_ms: Optional[int] = Field(None, gt=0)
    block_time_ms: int = Field(1000, gt=0)
    genesis_delay_ms: Optional[int] = Field(None, ge=0)
    admission_threshold_ppm: int = Field(900_000, ge=0)
    chain_file: Optional[Path] = Path("chain.bin")
    database_url: str = "sqlite:///./node.db"
    log_level: str = "INFO"
    request_timeout_s: float = Field(5.0, gt=0)

    @field_validator("peers", mode="before")
    @classmethod
    def split_peers(cls, value):
        if isinstance(value, str):
            value = [part.strip() for part in value.split(",")]
        return [peer.rstrip("/") for peer in value if peer]

    @field_validator("log_level")
    @classmethod
    def check_level(cls, value: str) -> str:
        value = value.upper()
        if value not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"unknown log level {value}")
        return value

    @property
    def url(self) -> str:
        """Base URL peers use to reach this node"""
        return (self.advertise_url or f"http://{self.host}:{self.port}").rstrip("/")

    def node_config(self) -> NodeConfig:
        overrides = {}
        if self.delta_st_ms is not None:
            overrides["delta_st"] = self.delta_st_ms
        if self.collect_interval_ms is not None:
            overrides["collect_interval"] = self.collect_interval_ms
        return NodeConfig(
            block_time=self.block_time_ms,
            gossip=GossipConfig.for_block_time(self.block_time_ms, **overrides),
            genesis_delay=self.genesis_delay_ms,
            admission_threshold=self.admission_threshold_ppm,
        )


def load_settings(config_path: Optional[Union[str, Path]] = None, **overrides) -> NodeSettings:
    """
    Merge environment, config file and overrides into validated settings.

    Raises:
        ConfigError: unreadable config file or invalid values
    """
    load_dotenv()
    data = {field: os.environ[var] for field, var in ENV_VARS.items() if os.environ.get(var)}
    if config_path is not None:
        try:
            data.update(json.loads(Path(config_path).read_text(encoding="utf-8")))
        except FileNotFoundError:
            raise ConfigError(f"config file {config_path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{config_path} is not valid JSON: {exc}") from None
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return NodeSettings.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid node settings: {exc}") from None


def load_or_create_key(path: Union[str, Path]) -> NodeKey:
    """Load the node's signing key, generating one on first start"""
    path = Path(path)
    try:
        if not path.exists():
            key = NodeKey.generate()
            path.parent.mkdir(parents=True, exist_ok=True)
            key.save(path)
            os.chmod(path, 0o600)
            logger.info(f"🔑 generated node key {key.node_id} in {path}")
            return key
        return NodeKey.load(path)
    except (OSError, ValueError, TypeError) as exc:
        raise ConfigError(f"cannot use key file {path}: {exc}") from None
