# app/main.py
from contextlib import asynccontextmanager
from typing import Optional

from fastapi import FastAPI
from starlette.concurrency import run_in_threadpool

from app.config import NodeSettings, load_or_create_key, load_settings
from app.db.database import create_session_factory
from app.routes import app_routes, node_routes, p2p_routes, shared_routes
from app.services.chain_store import ChainStore
from app.services.node_service import NodeService
from app.services.peer_registry import PeerRegistry
from app.services.runtime import MockRuntime, RuntimeAdapter
from app.services.transport import HttpPeerTransport, PeerTransport
from app.utils.logger import set_level


def build_service(
    settings: NodeSettings,
    transport: Optional[PeerTransport] = None,
    runtime: Optional[RuntimeAdapter] = None,
) -> NodeService:
    """Wire key, database, chain file, runtime and transport into a node"""
    set_level(settings.log_level)
    key = load_or_create_key(settings.key_file)
    registry = PeerRegistry(create_session_factory(settings.database_url))
    store = None
    if settings.chain_file is not None:
        store = ChainStore(settings.chain_file, settings.node_config().chain_params)
    transport = transport or HttpPeerTransport(key.node_id, settings.request_timeout_s)
    return NodeService(settings, key, runtime or MockRuntime(), transport, registry, store)


def create_app(service: Optional[NodeService] = None, settings: Optional[NodeSettings] = None) -> FastAPI:
    """
    The node's HTTP API. Without a service one is built from settings (or the
    environment) at startup; either way it is started and stopped with the app.
    """

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        node = app.state.node or build_service(settings or load_settings())
        app.state.node = node
        await run_in_threadpool(node.start)
        try:
            yield
        finally:
            await run_in_threadpool(node.stop)

    app = FastAPI(
        title="Edge ledger node",
        description="A self-balancing edge node: score gossip, leader-signed plan blocks and app placement.",
        version="1.0.0",
        lifespan=lifespan,
    )
    app.state.node = service

    app.include_router(node_routes.router, tags=["Node"])
    app.include_router(shared_routes.router, tags=["Shared pool"])
    app.include_router(app_routes.router, tags=["Apps"])
    app.include_router(p2p_routes.router, tags=["Peer to peer"])
    return app


app = create_app()
