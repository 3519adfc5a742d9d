"""
HTTP between node daemons.

Every peer-to-peer message is one POST to the peer's /p2p endpoint with the
encoded message as an octet-stream body and the sender's node id in the
X-Node-Id header. Joining, fetching a peer's representation and chain
catch-up use the public JSON API.
"""

import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Dict, List, Optional
from urllib.parse import urlsplit

import requests
from requests.adapters import HTTPAdapter
from urllib3.util.retry import Retry

from app.core.types import NodeId
from app.utils.logger import setup_logging

logger = setup_logging("edge.transport")

NODE_ID_HEADER = "X-Node-Id"
OCTET_STREAM = "application/octet-stream"


@dataclass(frozen=True)
class Response:
    status: int
    body: Any
    rtt_ms: float

    @property
    def ok(self) -> bool:
        return 200 <= self.status < 300


class PeerTransport(ABC):

    def __init__(self, node_id: NodeId, timeout: float = 5.0):
        self.node_id = node_id
        self.timeout = timeout

    @abstractmethod
    def _request(self, method: str, url: str, content: Optional[bytes] = None,
                 json: Any = None, headers: Optional[Dict[str, str]] = None) -> Optional[Response]:
        """Perform one request; None when the peer cannot be reached"""

    def deliver(self, url: str, data: bytes) -> Optional[Response]:
        """POST one encoded message; the response body says whether it was accepted"""
        headers = {NODE_ID_HEADER: self.node_id.hex(), "Content-Type": OCTET_STREAM}
        return self._request("POST", f"{url}/p2p", content=data, headers=headers)

    def fetch_node(self, url: str) -> Optional[Response]:
        return self._request("GET", f"{url}/node")

    def join(self, url: str, document: Dict[str, Any]) -> Optional[Response]:
        """Announce ourselves with POST /shared, falling back to PUT if the peer knows us"""
        response = self._request("POST", f"{url}/shared", json=document)
        if response is not None and response.status == 409:
            response = self._request("PUT", f"{url}/shared", json=document)
        return response

    def fetch_blocks(self, url: str, start: int, limit: int = 64) -> List[str]:
        response = self._request("GET", f"{url}/chain?start={start}&limit={limit}")
        if response is None or not response.ok:
            return []
        return list(response.body.get("blocks", []))


class HttpPeerTransport(PeerTransport):

    def __init__(self, node_id: NodeId, timeout: float = 5.0):
        super().__init__(node_id, timeout)
        self.session = self._create_session()

    def _create_session(self) -> requests.Session:
        """Session with one quick retry on refused connections"""
        session = requests.Session()
        retry_strategy = Retry(total=1, connect=1, read=0, backoff_factor=0.1, allowed_methods=None)
        adapter = HTTPAdapter(max_retries=retry_strategy, pool_maxsize=32)
        session.mount("http://", adapter)
        session.mount("https://", adapter)
        return session

    def _request(self, method, url, content=None, json=None, headers=None):
        started = time.perf_counter()
        try:
            response = self.session.request(
                method, url, data=content, json=json, headers=headers, timeout=self.timeout
            )
        except requests.exceptions.RequestException as exc:
            logger.debug(f"{method} {url} failed: {exc}")
            return None
        rtt = (time.perf_counter() - started) * 1000
        return Response(response.status_code, _body(response), rtt)

    def close(self) -> None:
        self.session.close()


class LoopbackTransport(PeerTransport):
    """
    Routes requests to in-process apps by base URL.

    Clients are anything with an httpx-style request() method, typically
    FastAPI TestClients, so several daemons can run in one process.
    """

    def __init__(self, node_id: NodeId, clients: Dict[str, Any], timeout: float = 5.0):
        super().__init__(node_id, timeout)
        self.clients = clients
        self.down = set()

    def _request(self, method, url, content=None, json=None, headers=None):
        parts = urlsplit(url)
        base = f"{parts.scheme}://{parts.netloc}"
        client = self.clients.get(base)
        if client is None or base in self.down:
            return None
        path = parts.path + (f"?{parts.query}" if parts.query else "")
        started = time.perf_counter()
        try:
            response = client.request(method, path, content=content, json=json, headers=headers)
        except Exception as exc:
            logger.debug(f"{method} {url} failed: {exc}")
            return None
        rtt = (time.perf_counter() - started) * 1000
        return Response(response.status_code, _body(response), rtt)


def _body(response) -> Any:
    try:
        return response.json()
    except ValueError:
        return None
