"""HTTP bridge from location-addressed clients to content addressing:
GET /ipfs/{cid} served from a front LRU byte-budget cache, then the
attached node's store, then a full network retrieval.

Tier precedence is strict; hits on an earlier tier never touch a later
one. Misses that reach the network populate both tiers.
"""

from __future__ import annotations

import json
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

from .merkledag import reassemble, verify_block
from .multiformats import Cid, FormatError, decode_cid
from .node import Node, RetrieveError
from .simnet.clock import Process, SimClock, unwrap

TIER_FRONT = "front"
TIER_NODE = "node"
TIER_NETWORK = "network"


class LruByteCache:
    """Byte-budget LRU keyed by CID string."""

    def __init__(self, capacity_bytes: int):
        if capacity_bytes <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity_bytes
        self._entries: "OrderedDict[str, bytes]" = OrderedDict()
        self.used = 0
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, key: str) -> Optional[bytes]:
        with self._lock:
            body = self._entries.get(key)
            if body is not None:
                self._entries.move_to_end(key)
            return body

    def put(self, key: str, body: bytes) -> None:
        if len(body) > self.capacity:
            return  # never evict the whole cache for one oversized object
        with self._lock:
            if key in self._entries:
                self.used -= len(self._entries.pop(key))
            self._entries[key] = body
            self.used += len(body)
            while self.used > self.capacity:
                _, evicted = self._entries.popitem(last=False)
                self.used -= len(evicted)


@dataclass
class AccessLogEntry:
    timestamp: int
    cid: str
    size: int
    upstream_ns: int
    tier: str
    status: int

    def to_json(self) -> str:
        return json.dumps({
            "t_ns": self.timestamp, "cid": self.cid, "size": self.size,
            "upstream_ns": self.upstream_ns, "tier": self.tier,
            "status": self.status}, sort_keys=True)


@dataclass
class Response:
    status: int
    body: bytes
    headers: Dict[str, str] = field(default_factory=dict)


@dataclass
class GatewayConfig:
    front_capacity_bytes: int = 64 * 1024 * 1024
    populate_front_on_node_hit: bool = True


class Gateway:
    """Serves /ipfs/{cid}. The attached node must run in server mode so
    retrieved content can be re-provided."""

    def __init__(self, node: Node, clock: SimClock,
                 config: Optional[GatewayConfig] = None):
        self.node = node
        self.clock = clock
        self.config = config or GatewayConfig()
        self.front = LruByteCache(self.config.front_capacity_bytes)
        self.log: List[AccessLogEntry] = []
        self._inflight: Dict[str, threading.Lock] = {}
        self._inflight_guard = threading.Lock()

    # -- request handling --------------------------------------------------------

    def handle_get(self, path: str, method: str = "GET") -> Response:
        if method != "GET":
            return Response(405, b"method not allowed")
        if not path.startswith("/ipfs/"):
            return Response(400, b"expected /ipfs/{cid}")
        cid_text = path[len("/ipfs/"):]
        try:
            cid = decode_cid(cid_text)
        except FormatError as exc:
            return Response(400, f"bad cid: {exc}".encode())
        key = str(cid)

        body = self.front.get(key)
        if body is not None:
            self._log(key, len(body), 0, TIER_FRONT, 200)
            return self._ok(body, TIER_FRONT)

        with self._single_flight(key):
            body = self.front.get(key)  # populated while we waited
            if body is not None:
                self._log(key, len(body), 0, TIER_FRONT, 200)
                return self._ok(body, TIER_FRONT)
            started = self.clock.now
            if cid in self.node.store:
                try:
                    body = reassemble(self.node.store, cid)
                except Exception:
                    body = None
                if body is not None:
                    if self.config.populate_front_on_node_hit:
                        self.front.put(key, body)
                    self._log(key, len(body), self.clock.now - started,
                              TIER_NODE, 200)
                    return self._ok(body, TIER_NODE)
            proc = Process(self.clock, self.node.retrieve(cid))
            self.clock.run()
            try:
                body, _ = unwrap(proc.value)
            except RetrieveError as exc:
                self._log(key, 0, self.clock.now - started, TIER_NETWORK, 504)
                return Response(504, f"retrieval failed: {exc}".encode())
            self.front.put(key, body)
            self._log(key, len(body), self.clock.now - started,
                      TIER_NETWORK, 200)
            return self._ok(body, TIER_NETWORK)

    def _ok(self, body: bytes, tier: str) -> Response:
        return Response(200, body, {
            "Content-Length": str(len(body)),
            "X-Cache-Tier": tier,
        })

    def _single_flight(self, key: str) -> threading.Lock:
        with self._inflight_guard:
            lock = self._inflight.get(key)
            if lock is None:
                lock = threading.Lock()
                self._inflight[key] = lock
            return lock

    def _log(self, cid: str, size: int, upstream_ns: int, tier: str,
             status: int) -> None:
        self.log.append(AccessLogEntry(self.clock.now, cid, size,
                                       upstream_ns, tier, status))

    # -- accounting ----------------------------------------------------------------

    def cache_stats(self, since: int = 0) -> Dict[str, float]:
        window = [e for e in self.log if e.timestamp >= since]
        if not window:
            raise ValueError("no logged requests in the window")
        total = len(window)
        total_bytes = sum(e.size for e in window) or 1
        stats: Dict[str, float] = {"requests": total}
        for tier in (TIER_FRONT, TIER_NODE, TIER_NETWORK):
            hits = [e for e in window if e.tier == tier and e.status == 200]
            stats[f"{tier}_rate"] = len(hits) / total
            stats[f"{tier}_bytes_share"] = sum(e.size for e in hits) / total_bytes
        return stats

    def access_log_text(self) -> str:
        return "\n".join(e.to_json() for e in self.log) + \
            ("\n" if self.log else "")


def serve_http(gateway: Gateway, listen: str = "127.0.0.1:8080"):
    """Real-clock HTTP/1.1 front end for the CLI demo. Blocks."""
    from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

    class Handler(BaseHTTPRequestHandler):
        def do_GET(self):  # noqa: N802 (stdlib naming)
            response = gateway.handle_get(self.path)
            self.send_response(response.status)
            for name, value in response.headers.items():
                self.send_header(name, value)
            if "Content-Length" not in response.headers:
                self.send_header("Content-Length", str(len(response.body)))
            self.end_headers()
            self.wfile.write(response.body)

        def log_message(self, fmt, *args):
            pass

    host, _, port = listen.partition(":")
    server = ThreadingHTTPServer((host, int(port or "8080")), Handler)
    server.serve_forever()
