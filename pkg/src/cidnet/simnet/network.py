"""Simulated transport: regional latency, dials with transport timeouts,
message delivery, and per-peer traffic counters.

Dial failure semantics: a dead or unreachable peer costs one full dial
timeout per batch of eight addresses, capped at 60 s overall.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from ..multiformats import PeerId
from .. import wire
from .clock import Event, NS_PER_MS, NS_PER_S, SimClock

DIAL_TIMEOUTS = {"tcp": 5 * NS_PER_S, "quic": 5 * NS_PER_S, "ws": 45 * NS_PER_S}
DIAL_OVERALL_CAP = 60 * NS_PER_S
MAX_CONCURRENT_ADDR_DIALS = 8
DEFAULT_RPC_TIMEOUT = 10 * NS_PER_S
DEFAULT_BANDWIDTH_BPS = 100_000_000  # per-link bits/s

DEFAULT_REGIONS = ("bahrain", "sydney", "cape-town", "n-california",
                   "frankfurt", "sao-paulo")

# one-way latencies in ms, rough inter-region orders of magnitude
_DEFAULT_ONE_WAY_MS = {
    ("bahrain", "bahrain"): 5,
    ("sydney", "sydney"): 5,
    ("cape-town", "cape-town"): 5,
    ("n-california", "n-california"): 5,
    ("frankfurt", "frankfurt"): 5,
    ("sao-paulo", "sao-paulo"): 5,
    ("bahrain", "sydney"): 105,
    ("bahrain", "cape-town"): 90,
    ("bahrain", "n-california"): 120,
    ("bahrain", "frankfurt"): 55,
    ("bahrain", "sao-paulo"): 130,
    ("sydney", "cape-town"): 140,
    ("sydney", "n-california"): 70,
    ("sydney", "frankfurt"): 140,
    ("sydney", "sao-paulo"): 160,
    ("cape-town", "n-california"): 140,
    ("cape-town", "frankfurt"): 90,
    ("cape-town", "sao-paulo"): 110,
    ("n-california", "frankfurt"): 75,
    ("n-california", "sao-paulo"): 95,
    ("frankfurt", "sao-paulo"): 100,
}


@dataclass(frozen=True)
class TransportProfile:
    kind: str = "tcp"
    dial_timeout: int = 5 * NS_PER_S
    overall_cap: int = DIAL_OVERALL_CAP
    max_concurrent: int = MAX_CONCURRENT_ADDR_DIALS

    @classmethod
    def for_kind(cls, kind: str) -> "TransportProfile":
        if kind not in DIAL_TIMEOUTS:
            raise ValueError(f"unknown transport {kind!r}")
        return cls(kind=kind, dial_timeout=DIAL_TIMEOUTS[kind])


class RegionLatencyModel:
    """Symmetric one-way latency matrix plus optional lognormal jitter."""

    def __init__(self, regions: Tuple[str, ...] = DEFAULT_REGIONS,
                 one_way_ms: Optional[Dict[Tuple[str, str], float]] = None,
                 jitter_sigma: float = 0.0):
        self.regions = regions
        self.jitter_sigma = jitter_sigma
        table = one_way_ms if one_way_ms is not None else _DEFAULT_ONE_WAY_MS
        self._ns: Dict[Tuple[str, str], int] = {}
        for (a, b), ms in table.items():
            ns = round(ms * NS_PER_MS)
            self._ns[(a, b)] = ns
            self._ns[(b, a)] = ns

    def one_way(self, a: str, b: str, rng: Optional[random.Random] = None) -> int:
        base = self._ns.get((a, b))
        if base is None:
            base = 80 * NS_PER_MS  # unknown pair: generic long-haul hop
        if self.jitter_sigma > 0 and rng is not None:
            base = round(base * rng.lognormvariate(0.0, self.jitter_sigma))
        return base


@dataclass(frozen=True)
class DialResult:
    connected: bool
    duration: int


@dataclass
class SimPeer:
    peer_id: PeerId
    node: object                   # must expose on_message(src, msg) -> reply|None
    region: str
    transport: TransportProfile = field(default_factory=TransportProfile)
    online: bool = True
    reachable: bool = True         # inbound-dialable (NAT model)
    addr_count: int = 1
    addresses: Tuple[str, ...] = ()
    sent_bytes: int = 0
    recv_bytes: int = 0
    dht_rpcs_sent: int = 0
    bitswap_msgs_sent: int = 0


def _is_dht(tag: int) -> bool:
    return tag < 0x10


class SimNetwork:
    def __init__(self, clock: SimClock, seed: int = 0,
                 latency: Optional[RegionLatencyModel] = None,
                 bandwidth_bps: int = DEFAULT_BANDWIDTH_BPS,
                 rpc_timeout: int = DEFAULT_RPC_TIMEOUT):
        self.clock = clock
        self.rng = random.Random(seed)
        self.latency = latency or RegionLatencyModel()
        self.bandwidth_bps = bandwidth_bps
        self.rpc_timeout = rpc_timeout
        self.peers: Dict[PeerId, SimPeer] = {}
        self._conns: Dict[PeerId, Dict[PeerId, bool]] = {}
        self.dropped_bytes = 0

    # -- membership ---------------------------------------------------------

    def add_peer(self, peer: SimPeer) -> None:
        if peer.peer_id in self.peers:
            raise ValueError(f"duplicate peer {peer.peer_id}")
        self.peers[peer.peer_id] = peer
        self._conns[peer.peer_id] = {}

    def set_online(self, pid: PeerId, online: bool) -> None:
        peer = self.peers[pid]
        peer.online = online
        if not online:
            for other in list(self._conns[pid]):
                self.disconnect(pid, other)

    def is_online(self, pid: PeerId) -> bool:
        peer = self.peers.get(pid)
        return peer is not None and peer.online

    def is_dialable(self, pid: PeerId) -> bool:
        peer = self.peers.get(pid)
        return peer is not None and peer.online and peer.reachable

    # -- connections --------------------------------------------------------

    def connect(self, a: PeerId, b: PeerId) -> None:
        self._conns[a][b] = True
        self._conns[b][a] = True

    def disconnect(self, a: PeerId, b: PeerId) -> None:
        self._conns[a].pop(b, None)
        self._conns[b].pop(a, None)

    def is_connected(self, a: PeerId, b: PeerId) -> bool:
        return b in self._conns.get(a, {})

    def connections_of(self, a: PeerId) -> List[PeerId]:
        return list(self._conns.get(a, {}))

    # -- latency helpers ----------------------------------------------------

    def _one_way(self, a: PeerId, b: PeerId) -> int:
        pa, pb = self.peers[a], self.peers[b]
        return self.latency.one_way(pa.region, pb.region, self.rng)

    def rtt(self, a: PeerId, b: PeerId) -> int:
        return 2 * self._one_way(a, b)

    def transfer_time(self, nbytes: int) -> int:
        return math.ceil(nbytes * 8 * NS_PER_S / self.bandwidth_bps)

    # -- dialing ------------------------------------------------------------

    def dial(self, src: PeerId, dst: PeerId) -> Event:
        """Connection attempt; always succeeds or times out, never raises."""
        ev = Event(self.clock)
        dst_peer = self.peers.get(dst)
        if dst_peer is None or not dst_peer.online or not dst_peer.reachable:
            profile = dst_peer.transport if dst_peer else TransportProfile()
            addr_count = dst_peer.addr_count if dst_peer else 1
            batches = max(1, math.ceil(addr_count / profile.max_concurrent))
            duration = min(batches * profile.dial_timeout, profile.overall_cap)
            self.clock.schedule(duration,
                                lambda: ev.succeed(DialResult(False, duration)))
            return ev
        duration = self.rtt(src, dst)  # handshake modeled as one RTT

        def finish():
            if self.is_dialable(dst):
                self.connect(src, dst)
                ev.succeed(DialResult(True, duration))
            else:
                # went offline mid-handshake: report at the transport timeout
                remaining = dst_peer.transport.dial_timeout - duration
                self.clock.schedule(
                    max(0, remaining),
                    lambda: ev.succeed(
                        DialResult(False, dst_peer.transport.dial_timeout)))

        self.clock.schedule(duration, finish)
        return ev

    # -- messaging ----------------------------------------------------------

    def _account_send(self, src: PeerId, msg: wire.Message, size: int) -> None:
        peer = self.peers[src]
        peer.sent_bytes += size
        if _is_dht(msg.tag):
            peer.dht_rpcs_sent += 1
        else:
            peer.bitswap_msgs_sent += 1

    def send(self, src: PeerId, dst: PeerId, msg: wire.Message) -> Event:
        """One-way delivery. The event fires when the message reaches (or
        is dropped at) the destination; its value is True iff delivered.
        Any handler reply is itself delivered one-way back to src."""
        ev = Event(self.clock)
        size = wire.encoded_size(msg)
        self._account_send(src, msg, size)
        delay = self._one_way(src, dst) + self.transfer_time(size)

        def deliver():
            dst_peer = self.peers.get(dst)
            if dst_peer is None or not dst_peer.online:
                self.dropped_bytes += size
                ev.succeed(False)
                return
            dst_peer.recv_bytes += size
            reply = dst_peer.node.on_message(src, msg)
            ev.succeed(True)
            if reply is not None:
                self.send(dst, src, reply)

        self.clock.schedule(delay, deliver)
        return ev

    def request(self, src: PeerId, dst: PeerId, msg: wire.Message,
                timeout: Optional[int] = None) -> Event:
        """RPC round trip. Event value is the reply Message, or None on
        timeout / dead destination."""
        if timeout is None:
            timeout = self.rpc_timeout
        ev = Event(self.clock)
        size = wire.encoded_size(msg)
        self._account_send(src, msg, size)
        delay = self._one_way(src, dst) + self.transfer_time(size)

        def deliver():
            dst_peer = self.peers.get(dst)
            if dst_peer is None or not dst_peer.online:
                self.dropped_bytes += size
                return
            dst_peer.recv_bytes += size
            reply = dst_peer.node.on_message(src, msg)
            if reply is None:
                reply = wire.Message(wire.ACK)
            rsize = wire.encoded_size(reply)
            self._account_send(dst, reply, rsize)
            rdelay = self._one_way(dst, src) + self.transfer_time(rsize)

            def arrive():
                src_peer = self.peers.get(src)
                if src_peer is None or not src_peer.online:
                    self.dropped_bytes += rsize
                    return
                src_peer.recv_bytes += rsize
                if not ev.triggered:
                    ev.succeed(reply)

            self.clock.schedule(rdelay, arrive)

        self.clock.schedule(delay, deliver)
        self.clock.schedule(timeout, lambda: None if ev.triggered
                            else ev.succeed(None))
        return ev
